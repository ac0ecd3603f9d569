import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DATA
from pds import paillier
from pds.errors import MalformedFrame, UnsupportedVersion, ZeroWidth
from pds.model import (
    AggregateRecord,
    DeviceIdentity,
    EncryptedReport,
    Region,
    WindowId,
    decode_record,
    decode_report,
    encode_record,
    encode_report,
    window_of,
)
from pds.paillier import Ciphertext

FP35 = "535fa30d7e25dd8a"

devices = st.builds(DeviceIdentity, st.integers(1, 999), st.integers(1, 999))
ciphertexts = st.builds(Ciphertext, st.integers(1, 2**1024), st.text("0123456789abcdef", min_size=16, max_size=16))


@st.composite
def records(draw):
    width = draw(st.integers(1, 100))
    ct = draw(ciphertexts)
    return AggregateRecord(draw(devices), WindowId(width * draw(st.integers(0, 10**6)), width), ct,
                           draw(st.integers(1, width)), ct.key_fingerprint)


class TestIdentity:
    def test_render_parse(self):
        d = DeviceIdentity(3, 12)
        assert d.id_number == "R3-I12"
        assert DeviceIdentity.parse("R3-I12") == d

    @pytest.mark.parametrize("bad", ["R0-I1", "R1-I0", "R01-I1", "r1-i1", "R1I1", "R1-I1 ", "", "R-1-I2"])
    def test_parse_rejects(self, bad):
        with pytest.raises(ValueError):
            DeviceIdentity.parse(bad)

    @given(devices)
    def test_round_trip(self, d):
        assert DeviceIdentity.parse(d.id_number) == d

    def test_region_membership(self):
        r = Region(2, 3)
        assert r.fog_node_id == "FN2"
        assert r.devices() == [DeviceIdentity(2, 1), DeviceIdentity(2, 2), DeviceIdentity(2, 3)]
        assert DeviceIdentity(2, 3) in r
        assert DeviceIdentity(2, 4) not in r
        assert DeviceIdentity(1, 1) not in r


class TestWindows:
    @pytest.mark.parametrize("ts,width,start,index", [(0, 10, 0, 0), (10, 10, 10, 1), (37, 10, 30, 3), (9, 10, 0, 0)])
    def test_window_of(self, ts, width, start, index):
        w = window_of(ts, width)
        assert (w.start_tick, w.index) == (start, index)

    def test_zero_width(self):
        with pytest.raises(ZeroWidth):
            window_of(5, 0)

    def test_misaligned(self):
        with pytest.raises(ValueError):
            WindowId(3, 10)

    @given(st.integers(0, 10**9), st.integers(1, 10**4))
    def test_partition(self, ts, width):
        w = window_of(ts, width)
        assert ts in w
        # neighbours do not contain it
        assert ts not in WindowId(w.start_tick + width, width)
        if w.start_tick:
            assert ts not in WindowId(w.start_tick - width, width)

    def test_record_count_bounds(self):
        ct = Ciphertext(5, FP35)
        with pytest.raises(ValueError):
            AggregateRecord(DeviceIdentity(1, 1), WindowId(0, 5), ct, 6, FP35)
        with pytest.raises(ValueError):
            AggregateRecord(DeviceIdentity(1, 1), WindowId(0, 5), ct, 0, FP35)


class TestCodec:
    def test_golden_report(self, tiny):
        r = EncryptedReport(DeviceIdentity(1, 2), 7, paillier.encrypt(tiny.public, 1, r=2))
        golden = (DATA / "report_golden.json").read_bytes()
        assert golden == b'{"v":1,"dev":"R1-I2","ts":7,"c":"288","kfp":"535fa30d7e25dd8a"}'
        assert encode_report(r) == golden
        assert decode_report(golden) == r

    def test_record_layout(self):
        rec = AggregateRecord(DeviceIdentity(1, 1), WindowId(0, 5), Ciphertext(683, FP35), 2, FP35)
        assert encode_record(rec) == (
            b'{"v":1,"dev":"R1-I1","win_start":0,"win_width":5,"c":"2ab","kfp":"535fa30d7e25dd8a","count":2}'
        )

    @given(devices, st.integers(0, 10**12), ciphertexts)
    def test_report_round_trip(self, d, ts, ct):
        r = EncryptedReport(d, ts, ct)
        data = encode_report(r)
        assert decode_report(data) == r
        assert encode_report(decode_report(data)) == data

    @given(records())
    def test_record_round_trip(self, rec):
        data = encode_record(rec)
        assert decode_record(data) == rec
        assert encode_record(decode_record(data)) == data

    def test_truncated(self):
        golden = (DATA / "report_golden.json").read_bytes()
        for cut in range(len(golden)):
            with pytest.raises(MalformedFrame):
                decode_report(golden[:cut])

    def test_truncated_position(self):
        golden = (DATA / "report_golden.json").read_bytes()
        with pytest.raises(MalformedFrame) as exc:
            decode_report(golden[:20])
        assert exc.value.position == 20

    @pytest.mark.parametrize("frame", [
        b'{"v":2,"dev":"R1-I2","ts":7,"c":"288","kfp":"535fa30d7e25dd8a"}',
        b'{"dev":"R1-I2","ts":7,"c":"288","kfp":"535fa30d7e25dd8a"}',
    ])
    def test_version(self, frame):
        with pytest.raises(UnsupportedVersion):
            decode_report(frame)

    @pytest.mark.parametrize("frame", [
        b'{"v":1,"ts":7,"dev":"R1-I2","c":"288","kfp":"535fa30d7e25dd8a"}',  # field order
        b'{"v":1, "dev":"R1-I2","ts":7,"c":"288","kfp":"535fa30d7e25dd8a"}',  # whitespace
        b'{"v":1,"dev":"R1-I2","ts":7,"c":"0288","kfp":"535fa30d7e25dd8a"}',  # leading zero
        b'{"v":1,"dev":"R1-I2","ts":7,"c":"288","kfp":"535fa30d7e25dd8a","x":1}',
        b'{"v":1,"dev":"R1-I2","ts":"7","c":"288","kfp":"535fa30d7e25dd8a"}',
        b'{"v":1,"dev":"R1-I2","ts":-1,"c":"288","kfp":"535fa30d7e25dd8a"}',
        b'{"v":1,"dev":"R1-I2","ts":true,"c":"288","kfp":"535fa30d7e25dd8a"}',
        b'{"v":1,"dev":"bogus","ts":7,"c":"288","kfp":"535fa30d7e25dd8a"}',
        b'[1,2]',
        b'\xff',
    ])
    def test_rejects_non_canonical(self, frame):
        with pytest.raises(MalformedFrame):
            decode_report(frame)

    def test_record_rejects_report_frame(self):
        with pytest.raises(MalformedFrame):
            decode_record((DATA / "report_golden.json").read_bytes())

    def test_record_bad_window(self):
        obj = {"v": 1, "dev": "R1-I1", "win_start": 3, "win_width": 5, "c": "2ab", "kfp": FP35, "count": 1}
        with pytest.raises(MalformedFrame):
            decode_record(json.dumps(obj, separators=(",", ":")).encode())
