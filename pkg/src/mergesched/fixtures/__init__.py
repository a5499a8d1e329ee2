"""Shipped profile and calibration fixtures.

The two ResNet-shaped profiles reproduce the real architectures' gradient
tensor lists (161 and 314 tensors, exact parameter counts) in
backprop-readiness order.  Per-tensor compute times are an approximation:
proportional to parameter count times output spatial positions, normalized
so the 50-layer model's backprop totals 64 ms.

The calibration constants pin a desk-scale operating point:

- A = 64 ms of backprop compute per iteration
- dense full-precision exchange of all 161 tensors totals 66 ms at the
  reference worker count (2)
- per-group codec floor 0.13 ms (0.1 encode + 0.03 decode, fitted jointly)

The split of the 66 ms into per-call latency (0.3 ms) and per-element slope
is an assumption stated here, not a measured quantity, as is the growth of
communication cost with worker count (see costmodel.scale_comm_params).
"""

from __future__ import annotations

import json
from pathlib import Path

from ..costmodel import CostParams
from ..profiles import LayerProfile, ModelProfile, load_profile

DATA_DIR = Path(__file__).parent / "data"

CALIBRATION = {
    "A_ms": 64.0,
    "B_h_ms": 0.13,
    "gamma_h_ms_per_elem": 5e-8,
    "B_g_ms": 0.3,
    "dense_comm_total_ms": 66.0,
    "reference_workers": 2,
}

_STAGE_SPATIAL = (56 * 56, 28 * 28, 14 * 14, 7 * 7)


def _resnet_forward_layers(blocks: tuple[int, ...]) -> list[tuple[int, float]]:
    """(params, compute_weight) per gradient tensor in forward order."""
    layers: list[tuple[int, float]] = []

    def add(params: int, spatial: int):
        layers.append((params, float(params) * spatial))

    add(64 * 3 * 7 * 7, 112 * 112)  # conv1
    add(64, 112 * 112)  # bn1 weight
    add(64, 112 * 112)  # bn1 bias
    in_ch = 64
    for stage, n_blocks in enumerate(blocks):
        planes = 64 * (2 ** stage)
        out_ch = planes * 4
        spatial = _STAGE_SPATIAL[stage]
        for block in range(n_blocks):
            add(planes * in_ch, spatial)  # 1x1 reduce
            add(planes, spatial)
            add(planes, spatial)
            add(planes * planes * 9, spatial)  # 3x3
            add(planes, spatial)
            add(planes, spatial)
            add(out_ch * planes, spatial)  # 1x1 expand
            add(out_ch, spatial)
            add(out_ch, spatial)
            if block == 0:  # projection shortcut
                add(out_ch * in_ch, spatial)
                add(out_ch, spatial)
                add(out_ch, spatial)
            in_ch = out_ch
    add(2048 * 1000, 1)  # fc weight
    add(1000, 1)  # fc bias
    return layers


def _resnet_profile(name: str, blocks: tuple[int, ...], ms_per_weight: float) -> ModelProfile:
    forward = _resnet_forward_layers(blocks)
    backward = list(reversed(forward))  # backprop readiness: output layer first
    return ModelProfile(
        name=name,
        layers=tuple(
            LayerProfile(index=i, size=params, compute_time=weight * ms_per_weight)
            for i, (params, weight) in enumerate(backward)
        ),
    )


def _ms_per_weight_r50() -> float:
    weights = sum(w for _, w in _resnet_forward_layers((3, 4, 6, 3)))
    return CALIBRATION["A_ms"] / weights


def resnet50_profile() -> ModelProfile:
    """161-tensor profile; backprop compute normalized to 64 ms total."""
    return _resnet_profile("resnet50_161", (3, 4, 6, 3), _ms_per_weight_r50())


def resnet101_profile() -> ModelProfile:
    """314-tensor profile at the same per-weight compute rate as the 50-layer one."""
    return _resnet_profile("resnet101_314", (3, 4, 23, 3), _ms_per_weight_r50())


def paper_calibration_params() -> CostParams:
    """Affine cost constants at the calibration operating point (2 workers)."""
    profile = resnet50_profile()
    n, d = profile.n_tensors, profile.total_size
    gamma_g = (CALIBRATION["dense_comm_total_ms"] - n * CALIBRATION["B_g_ms"]) / d
    return CostParams(
        B_h=CALIBRATION["B_h_ms"],
        gamma_h=CALIBRATION["gamma_h_ms_per_elem"],
        B_g=CALIBRATION["B_g_ms"],
        gamma_g=gamma_g,
        A=CALIBRATION["A_ms"],
    )


def calibration_document() -> dict:
    params = paper_calibration_params()
    doc = dict(CALIBRATION)
    doc["gamma_g_ms_per_elem"] = params.gamma_g
    doc["profile"] = "resnet50_161"
    return doc


FIXTURE_PROFILES = {
    "resnet50_161": resnet50_profile,
    "resnet101_314": resnet101_profile,
}


def fixture_path(name: str) -> Path:
    path = DATA_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no fixture {name!r} under {DATA_DIR}")
    return path


def load_fixture_profile(name: str) -> ModelProfile:
    with open(fixture_path(name), "r", encoding="utf-8") as fh:
        return load_profile(fh.read())


def load_calibration(path=None) -> CostParams:
    source = fixture_path("paper_calibration") if path is None else Path(path)
    with open(source, "r", encoding="utf-8") as fh:
        return CostParams.from_dict(json.load(fh))


def write_data_files(directory=None) -> list[Path]:
    """Regenerate the shipped JSON fixtures."""
    directory = DATA_DIR if directory is None else Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, builder in FIXTURE_PROFILES.items():
        path = directory / f"{name}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(builder().to_document(), fh)
            fh.write("\n")
        written.append(path)
    path = directory / "paper_calibration.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(calibration_document(), fh, indent=2)
        fh.write("\n")
    written.append(path)
    return written


if __name__ == "__main__":
    for p in write_data_files():
        print(p)
