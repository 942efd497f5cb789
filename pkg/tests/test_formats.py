import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from kwspot.errors import FormatError
from kwspot.formats import (
    decode_sdkf,
    encode_sdkf,
    load_scores,
    read_confusions,
    read_detections,
    read_sdkf,
    save_scores,
    scores_from_csv,
    scores_to_csv,
    write_confusions,
    write_detections,
    write_report,
    write_roc,
    write_sdkf,
)
from kwspot.lattice import ScoreKind, ScoreMatrix
from kwspot.models.reports import Detection, MetricsReport, RocPoint
from kwspot.postproc import estimate_confusions
from kwspot.units import UnitInventory

MATRIX = np.array([[0.5, -1.25, 3.0], [-0.75, 2.0, 0.125]])


def test_sdkf_layout():
    data = encode_sdkf(MATRIX)
    assert data[:4] == b"SDKF"
    assert len(data) == 12 + 4 * MATRIX.size
    assert_array_equal(decode_sdkf(data), MATRIX)


def test_sdkf_file(tmp_path):
    write_sdkf(MATRIX, tmp_path / "m.sdkf")
    assert_array_equal(read_sdkf(tmp_path / "m.sdkf"), MATRIX)


def test_sdkf_rejects_bad_input():
    with pytest.raises(FormatError):
        decode_sdkf(b"NOPE" + bytes(8))
    with pytest.raises(FormatError):
        decode_sdkf(encode_sdkf(MATRIX)[:-4])
    with pytest.raises(FormatError):
        encode_sdkf(np.zeros(3))


def test_csv_scores():
    text = scores_to_csv(MATRIX)
    assert text.splitlines()[0] == "t,u0,u1,u2"
    assert_array_equal(scores_from_csv(text), MATRIX)


def test_csv_rejects_bad_rows():
    with pytest.raises(FormatError):
        scores_from_csv("frame,a\n0,1.0\n")
    with pytest.raises(FormatError):
        scores_from_csv("t,u0\n1,0.5\n")
    with pytest.raises(FormatError):
        scores_from_csv("t,u0,u1\n0,0.5\n")


def test_load_scores_detects_format(tmp_path):
    log_post = ScoreMatrix(np.log([[0.25, 0.75], [0.5, 0.5]]))
    save_scores(log_post, tmp_path / "a.sdkf")
    save_scores(log_post, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text(encoding="utf-8").startswith("t,")
    from_sdkf = load_scores(tmp_path / "a.sdkf")
    from_csv = load_scores(tmp_path / "a.csv", ScoreKind.LOG_LIKELIHOOD)
    assert_allclose(from_sdkf.values, log_post.values, atol=1e-6)
    assert_array_equal(from_csv.values, log_post.values)
    assert from_csv.kind == ScoreKind.LOG_LIKELIHOOD


def test_load_scores_rejects_binary_junk(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"\xff\xfe\x00\x01")
    with pytest.raises(FormatError):
        load_scores(path)


def test_detections_file(tmp_path):
    detections = [
        Detection(utt_id="u1", keyword=1, start_frame=3, end_frame=9, score=-0.5),
        Detection(utt_id="u2", keyword=0, start_frame=0, end_frame=4, score=-2.25),
    ]
    path = tmp_path / "detections.csv"
    write_detections(detections, ["kw00", "kw01"], path)
    assert path.read_text(encoding="utf-8").splitlines()[1] == "u1,kw01,3,9,-0.500000"
    assert read_detections(path, ["kw00", "kw01"]) == detections


def test_detections_unknown_keyword(tmp_path):
    path = tmp_path / "detections.csv"
    write_detections([Detection(keyword=0, start_frame=0, end_frame=0, score=0.0)], ["kw00"], path)
    with pytest.raises(FormatError):
        read_detections(path, ["other"])


def test_roc_file(tmp_path):
    write_roc([RocPoint(threshold=0.5, far=0.25, frr=0.0)], tmp_path / "roc.csv")
    assert (tmp_path / "roc.csv").read_text(encoding="utf-8") == "threshold,far,frr\n0.5,0.25,0.0\n"


def test_confusions_file(tmp_path):
    inventory = UnitInventory(phones=("a", "b"))
    conf = estimate_confusions([([0, 1], [0, 1]), ([1], [0, 1])], [0, 1], floor=0.01)
    write_confusions(conf, inventory, tmp_path / "conf.json")
    again = read_confusions(tmp_path / "conf.json", inventory)
    assert again.units == conf.units
    assert_allclose(again.sub, conf.sub)
    assert_allclose(again.deletion, conf.deletion)
    assert_allclose(again.insertion, conf.insertion)


def test_confusions_bad_file(tmp_path):
    (tmp_path / "conf.json").write_text("{}", encoding="utf-8")
    with pytest.raises(FormatError):
        read_confusions(tmp_path / "conf.json", UnitInventory(phones=("a",)))


def test_report_bytes_are_stable(tmp_path):
    report = MetricsReport(mode="kwfiller", eer=0.25, faf=1.5, positives=4, negatives=6, detections=3,
                           roc=[RocPoint(threshold=0.0, far=0.5, frr=0.25)])
    write_report(report, tmp_path / "a.json")
    write_report(MetricsReport.model_validate(report.model_dump()), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    data = json.loads((tmp_path / "a.json").read_text(encoding="utf-8"))
    assert list(data) == sorted(data)

    write_report({"smooth": report}, tmp_path / "c.json")
    assert json.loads((tmp_path / "c.json").read_text(encoding="utf-8"))["smooth"]["eer"] == 0.25
