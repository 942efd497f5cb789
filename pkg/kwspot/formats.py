"""
On-disk formats: SDKF score/feature matrices, CSV alternatives, detections,
confusion matrices and the JSON reports.
"""
import csv
import io
import json
import logging
import struct
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
from pydantic import BaseModel

from kwspot.errors import FormatError
from kwspot.lattice import ScoreKind, ScoreMatrix
from kwspot.models.reports import Detection, RocPoint
from kwspot.postproc import ConfusionMatrix
from kwspot.units import UnitInventory

logger = logging.getLogger(__name__)

SDKF_MAGIC = b"SDKF"
PathLike = Union[str, Path]


def encode_sdkf(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise FormatError(f"SDKF holds 2-D matrices, got shape {values.shape}")
    T, U = values.shape
    return SDKF_MAGIC + struct.pack("<II", T, U) + values.astype("<f4").tobytes()


def decode_sdkf(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != SDKF_MAGIC:
        raise FormatError("missing SDKF header")
    T, U = struct.unpack("<II", data[4:12])
    body = data[12:]
    if len(body) != 4 * T * U:
        raise FormatError(f"SDKF body holds {len(body)} bytes, expected {4 * T * U}")
    return np.frombuffer(body, dtype="<f4").reshape(T, U).astype(np.float64)


def write_sdkf(values: np.ndarray, path: PathLike) -> None:
    Path(path).write_bytes(encode_sdkf(values))


def read_sdkf(path: PathLike) -> np.ndarray:
    return decode_sdkf(Path(path).read_bytes())


def scores_to_csv(values: np.ndarray) -> str:
    values = np.asarray(values)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"u{u}" for u in range(values.shape[1])])
    for t, row in enumerate(values):
        writer.writerow([t] + [repr(float(v)) for v in row])
    return buf.getvalue()


def scores_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0] or rows[0][0] != "t":
        raise FormatError("score CSV must start with a `t,u0,u1,...` header")
    U = len(rows[0]) - 1
    values = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != U + 1 or int(row[0]) != len(values):
            raise FormatError(f"score CSV line {lineno}: expected frame {len(values)} with {U} values")
        values.append([float(v) for v in row[1:]])
    return np.array(values, dtype=np.float64).reshape(len(values), U)


def load_scores(path: PathLike, kind: ScoreKind = ScoreKind.LOG_POSTERIOR) -> ScoreMatrix:
    """Read a score matrix from SDKF (or CSV when the file is text with a `t,` header)"""
    data = Path(path).read_bytes()
    if data[:4] == SDKF_MAGIC:
        return ScoreMatrix(decode_sdkf(data), kind)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: neither SDKF nor CSV") from None
    return ScoreMatrix(scores_from_csv(text), kind)


def save_scores(scores: ScoreMatrix, path: PathLike) -> None:
    if str(path).endswith(".csv"):
        Path(path).write_text(scores_to_csv(scores.values), encoding="utf-8")
    else:
        write_sdkf(scores.values, path)


def write_detections(detections: Sequence[Detection], keyword_names: Sequence[str], path: PathLike) -> None:
    """CSV `utt_id,keyword,start_frame,end_frame,score`"""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["utt_id", "keyword", "start_frame", "end_frame", "score"])
        for d in detections:
            writer.writerow([d.utt_id, keyword_names[d.keyword], d.start_frame, d.end_frame, f"{d.score:.6f}"])


def read_detections(path: PathLike, keyword_names: Sequence[str]) -> List[Detection]:
    index = {name: k for k, name in enumerate(keyword_names)}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        try:
            return [
                Detection(utt_id=row["utt_id"], keyword=index[row["keyword"]], start_frame=int(row["start_frame"]),
                          end_frame=int(row["end_frame"]), score=float(row["score"]))
                for row in reader
            ]
        except (KeyError, ValueError) as e:
            raise FormatError(f"{path}: bad detection row ({e})") from e


def write_roc(roc: Sequence[RocPoint], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["threshold", "far", "frr"])
        for p in roc:
            writer.writerow([repr(p.threshold), repr(p.far), repr(p.frr)])


def write_confusions(confusions: ConfusionMatrix, inventory: UnitInventory, path: PathLike) -> None:
    Path(path).write_text(json.dumps(confusions.to_dict(inventory), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_confusions(path: PathLike, inventory: UnitInventory) -> ConfusionMatrix:
    try:
        return ConfusionMatrix.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), inventory)
    except (json.JSONDecodeError, KeyError) as e:
        raise FormatError(f"{path}: bad confusion matrix ({e})") from e


def write_report(report: Union[BaseModel, Dict[str, BaseModel]], path: PathLike) -> None:
    """Stable JSON dump (sorted keys, fixed indent) so equal reports give equal bytes"""
    if isinstance(report, BaseModel):
        data = report.model_dump(mode="json")
    else:
        data = {k: v.model_dump(mode="json") for k, v in report.items()}
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
