"""Model complexity accounting: parameter partition, FLOPs, per-component FPS.

FLOP rules (multiply-accumulate = 2 ops; normalizations, activations, and
interpolation excluded):
- conv:      2 * k^2 * c_in * c_out * h_out * w_out
- linear:    2 * f_in * f_out, times the number of positions it is applied to
- attention: 2 * n_q * n_k * dim for each of the score (QK^T) and value
  (softmax @ V) products

Model size is reported as raw float32 parameter bytes (no container
overhead). FPS numbers are device-bound; the device descriptor is always
attached, and measurement repeats until two consecutive medians agree
within the stability band.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import BoundingBox
from .model import COMPONENTS, BackboneBundle, FreezePolicy

FPS_COMPONENTS = ("image_encoder", "prompt_encoder", "mask_decoder", "end_to_end")
STABILITY_BAND = 0.20
STABILITY_ATTEMPTS = 5


@dataclass(frozen=True)
class ParameterPartition:
    by_component: dict[str, int]
    trainable: int

    @property
    def total(self) -> int:
        return sum(self.by_component.values())


def count_parameters(bundle: BackboneBundle, policy: FreezePolicy) -> ParameterPartition:
    """Exact per-component counts plus the policy-selected trainable subset."""
    by_component = bundle.parameter_counts()
    trainable = sum(
        count for name, count in by_component.items() if policy.trainable(name)
    )
    return ParameterPartition(by_component=by_component, trainable=trainable)


def layer_flops(layer: dict) -> int:
    kind = layer["kind"]
    reps = layer.get("reps", 1) * layer.get("batch", 1)
    if kind == "conv":
        ops = 2 * layer["k"] ** 2 * layer["cin"] * layer["cout"] * layer["hout"] * layer["wout"]
    elif kind == "linear":
        ops = 2 * layer["fin"] * layer["fout"] * layer.get("count", 1)
    elif kind == "attention":
        ops = 2 * (2 * layer["n_q"] * layer["n_k"] * layer["dim"])
    else:
        raise ValueError(f"unrecognized layer kind {kind!r} in layer {layer.get('name')!r}")
    return ops * reps


def estimate_flops(bundle: BackboneBundle, batch_size: int = 1) -> float:
    """Analytic forward-pass GFLOPs at the bundle's configured input size."""
    return sum(layer_flops(layer) for layer in bundle.flop_layers(batch_size)) / 1e9


@dataclass(frozen=True)
class FpsMeasurement:
    fps: float
    component: str
    device: str
    iters: int
    stable: bool
    attempts: int


def _component_runner(bundle: BackboneBundle, component: str):
    size = bundle.config.input_size
    normalized = bundle.preprocess(
        np.full((size, size, 3), 127, dtype=np.uint8)
    )
    box = BoundingBox(size // 4, size // 4, size // 2, size // 2)
    if component == "image_encoder":
        return lambda: bundle.encode_image(normalized)
    if component == "prompt_encoder":
        return lambda: bundle.encode_box(box)
    embedding = bundle.encode_image(normalized)
    prompt = bundle.encode_box(box)
    if component == "mask_decoder":
        def run_decoder():
            with torch.no_grad():
                bundle.decode(embedding, prompt)
        return run_decoder
    if component == "end_to_end":
        def run_end_to_end():
            with torch.no_grad():
                emb = bundle.encode_image(normalized)
                bundle.decode(emb, bundle.encode_box(box))
        return run_end_to_end
    raise ValueError(f"unknown component {component!r}, expected one of {FPS_COMPONENTS}")


def _device_descriptor() -> str:
    if torch.cuda.is_available():
        return f"cuda:{torch.cuda.get_device_name(0)}"
    return f"cpu ({torch.get_num_threads()} threads, torch {torch.__version__})"


def _timed_fps(run, warmup: int, iters: int) -> float:
    for _ in range(warmup):
        run()
    if torch.cuda.is_available():
        torch.cuda.synchronize()
    started = time.perf_counter()
    for _ in range(iters):
        run()
    if torch.cuda.is_available():
        torch.cuda.synchronize()
    return iters / (time.perf_counter() - started)


def measure_fps(
    bundle: BackboneBundle, component: str, warmup: int = 2, iters: int = 10
) -> FpsMeasurement:
    """Median-of-3 FPS, repeated until two consecutive medians agree within 20%."""
    if iters < 10:
        raise ValueError("iters must be >= 10")
    run = _component_runner(bundle, component)
    previous = None
    stable = False
    attempts = 0
    fps = 0.0
    for attempts in range(1, STABILITY_ATTEMPTS + 1):
        fps = statistics.median(_timed_fps(run, warmup, iters) for _ in range(3))
        if previous is not None and abs(fps - previous) / max(fps, previous) < STABILITY_BAND:
            stable = True
            break
        previous = fps
    return FpsMeasurement(
        fps=fps,
        component=component,
        device=_device_descriptor(),
        iters=iters,
        stable=stable,
        attempts=attempts,
    )


@dataclass(frozen=True)
class ComplexityReport:
    kind: str
    params_total: int
    params_trainable: int
    params_by_component: dict[str, int]
    gflops: float
    model_size_mb: float  # raw float32 parameter bytes
    fps_by_component: dict[str, FpsMeasurement] = field(default_factory=dict)

    @property
    def gmacs(self) -> float:
        # multiply-add counted as 1, the convention most counting tools report
        return self.gflops / 2.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params_total": self.params_total,
            "params_trainable": self.params_trainable,
            "params_by_component": dict(self.params_by_component),
            "gflops": self.gflops,
            "gmacs": self.gmacs,
            "model_size_mb": self.model_size_mb,
            "fps": {
                name: {"fps": m.fps, "device": m.device, "stable": m.stable}
                for name, m in self.fps_by_component.items()
            },
        }


def profile(
    bundle: BackboneBundle,
    policy: FreezePolicy | None = None,
    measure: bool = True,
    warmup: int = 2,
    iters: int = 10,
) -> ComplexityReport:
    policy = policy or FreezePolicy()
    partition = count_parameters(bundle, policy)
    fps = {}
    if measure:
        fps = {name: measure_fps(bundle, name, warmup, iters) for name in FPS_COMPONENTS}
    return ComplexityReport(
        kind=bundle.kind,
        params_total=partition.total,
        params_trainable=partition.trainable,
        params_by_component=partition.by_component,
        gflops=estimate_flops(bundle),
        model_size_mb=partition.total * 4 / 1e6,
        fps_by_component=fps,
    )


def render_complexity(report: ComplexityReport) -> str:
    """Text tables shaped like the complexity and speed summaries."""
    lines = [
        "Model        GFLOPs     GMACs      Parameters(M)          Model size(MB)",
        "-----        ------     -----      -------------          --------------",
        (
            f"{report.kind:<12} {report.gflops:<10.2f} {report.gmacs:<10.2f} "
            f"{report.params_total / 1e6:.2f}M ({report.params_trainable / 1e6:.2f}M trained)"
            f"   {report.model_size_mb:.1f}"
        ),
        "",
        "Component breakdown (parameters):",
    ]
    for name in COMPONENTS:
        lines.append(f"  {name:<16} {report.params_by_component[name]:>12,}")
    if report.fps_by_component:
        lines += ["", "FPS (device-bound):"]
        for name, m in report.fps_by_component.items():
            flag = "" if m.stable else "  [unstable]"
            lines.append(f"  {name:<16} {m.fps:>10.2f}  {m.device}{flag}")
    return "\n".join(lines) + "\n"
