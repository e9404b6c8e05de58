"""Experiment configuration: a flat key=value text format with validation.

Lines are ``key = value``; ``#`` starts a comment. Tuples are comma
separated, booleans are true/false. Unknown keys are rejected so typos fail
loudly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import numpy as np


@dataclass
class ExperimentConfig:
    # data: either a dataset directory or a synthetic specification
    dataset_path: str = ""
    synth_seed: int = 0
    synth_train: int = 64
    synth_val: int = 16
    image_size: int = 32
    num_classes: int = 2

    # network (desk-scale training default; NetworkConfig alone defaults wider)
    widths: tuple = (8, 16, 32)
    state_size: int = 8
    skip_step: int = 2
    use_sparse: bool = True

    # training recipe
    use_spobe: bool = False
    use_pcl: bool = False
    guide: str = "synthetic_oracle"
    lam: float = 0.5
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_norm: float = 5.0
    max_iter: int = 2000
    batch_size: int = 4
    eval_interval: int = 100
    seed: int = 0
    augment: bool = True
    noise_sigma: float = 0.01

    # boundary estimation
    spobe_schedule: tuple = (3, 5, 7, 9, 11)
    spobe_threshold: int = 0    # 0 means the schedule-derived default
    edge_method: str = "canny"
    canny_sigma: float = 1.0
    canny_low: float = 0.1
    canny_high: float = 0.2
    sobel_threshold: float = 0.5

    # bookkeeping
    out_dir: str = "runs/run0"
    spacing_mm: float = 1.0
    bbox_tau: float = 0.5

    def validate(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.max_iter < 0 or self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("max_iter >= 0, batch_size >= 1, eval_interval >= 1 required")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.guide not in ("synthetic_oracle", "identity"):
            raise ValueError(f"unknown guide kind {self.guide!r}")
        if self.edge_method not in ("canny", "sobel"):
            raise ValueError(f"unknown edge method {self.edge_method!r}")
        if self.dataset_path and not os.path.isdir(self.dataset_path):
            raise ValueError(f"dataset path does not exist: {self.dataset_path}")
        factor = 2 ** (len(self.widths) - 1)
        if self.image_size % factor:
            raise ValueError(f"image size {self.image_size} not divisible by "
                             f"network downsampling factor {factor}")
        if not 0.0 < self.bbox_tau < 1.0:
            raise ValueError("bbox_tau must lie in (0, 1)")
        if self.canny_low >= self.canny_high:
            raise ValueError("canny_low must be below canny_high")
        return self

    def network_config(self):
        from .network import NetworkConfig
        return NetworkConfig(num_classes=self.num_classes, widths=tuple(self.widths),
                             input_size=(self.image_size, self.image_size),
                             state_size=self.state_size, skip_step=self.skip_step,
                             use_sparse=self.use_sparse, dtype=np.float32)

    def edge_params(self):
        if self.edge_method == "canny":
            return {"sigma": self.canny_sigma, "low": self.canny_low, "high": self.canny_high}
        return {"threshold": self.sobel_threshold}

    def spobe_thresholds(self):
        if self.spobe_threshold > 0:
            return {c: self.spobe_threshold for c in range(self.num_classes)}
        return None  # schedule-derived default

    def to_file(self, path):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    @classmethod
    def from_file(cls, path, overrides=None):
        values = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                values[key] = value
        values.update(overrides or {})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values):
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        defaults = cls()
        for key, value in values.items():
            if not isinstance(value, str):
                kwargs[key] = value
                continue
            current = getattr(defaults, key)
            if isinstance(current, bool):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(f"config key {key}: expected a boolean, got {value!r}")
                kwargs[key] = value.lower() in ("true", "1")
            elif isinstance(current, int):
                kwargs[key] = int(value)
            elif isinstance(current, float):
                kwargs[key] = float(value)
            elif isinstance(current, tuple):
                kwargs[key] = tuple(int(v) for v in value.split(",") if v.strip())
            else:
                kwargs[key] = value
        return cls(**kwargs)
