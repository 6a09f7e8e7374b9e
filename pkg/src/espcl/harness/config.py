"""Experiment configuration: strict JSON schema, canonical hashing."""

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..continual import TrainSettings
from ..data import GaussianSpec, TabularFile, generate_gaussian_stream, load_tabular_stream


class ConfigValidationError(ValueError):
    """Invalid configuration; ``str()`` lists every offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ArchConfig(_Strict):
    block_widths: list = Field(default_factory=lambda: [64, 64, 64, 64])
    branch_hidden: Optional[int] = Field(default=None, gt=0)
    class_count: Optional[int] = Field(default=None, gt=0)

    @field_validator("block_widths")
    @classmethod
    def _widths(cls, v):
        if len(v) < 2:
            raise ValueError("need at least 2 encoder blocks")
        for w in v:
            ws = w if isinstance(w, list) else [w]
            if not ws or any(not isinstance(x, int) or isinstance(x, bool) or x <= 0 for x in ws):
                raise ValueError(f"block width {w!r} must be a positive int or list of them")
        return v


class OptimizerConfig(_Strict):
    kind: Literal["sgd", "adam"] = "sgd"
    lr: float = Field(default=1e-3, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)


class MethodParams(_Strict):
    lambda_: float = Field(default=2000.0, ge=0, alias="lambda")
    gamma: float = Field(default=1.0, ge=0, le=1)
    c: float = Field(default=0.1, ge=0)
    xi: float = Field(default=0.1, gt=0)
    branch_epochs: int = Field(default=1, ge=0)
    branch_lr: Optional[float] = Field(default=None, gt=0)
    branch_data_fraction: float = Field(default=0.1, ge=0, le=1)


class GaussianDataset(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    class_count: int = Field(default=10, gt=1)
    dims: int = Field(default=16, gt=0)
    stddev: float = Field(default=1.0 / 3.0, gt=0)
    radius: float = Field(default=1.0, gt=0)
    train_per_class: int = Field(default=500, gt=0)
    test_per_class: int = Field(default=200, gt=0)
    means: Optional[list] = None
    seed: Optional[int] = None


class TabularDataset(_Strict):
    kind: Literal["csv", "idx"]
    path: str
    labels_path: Optional[str] = None
    test_path: Optional[str] = None
    test_labels_path: Optional[str] = None
    test_fraction: float = Field(default=0.2, gt=0, lt=1)


class ExperimentConfig(_Strict):
    method: Literal["esp", "stability", "plasticity", "linear", "oewc", "si"] = "esp"
    scenario: Literal["only", "all"] = "all"
    strict_only: bool = False
    replay_fraction: float = Field(default=0.2, ge=0, le=1)
    seed: int = 0
    tasks: int = Field(default=5, gt=0)
    task_order: Optional[list] = None
    batch_size: int = Field(default=32, gt=0)
    tau: float = Field(default=0.0, ge=0)
    arch: ArchConfig = Field(default_factory=ArchConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    method_params: MethodParams = Field(default_factory=MethodParams)
    dataset: Union[GaussianDataset, TabularDataset] = Field(
        default_factory=GaussianDataset, discriminator="kind"
    )

    @model_validator(mode="after")
    def _cross_checks(self):
        if self.task_order is not None and sorted(self.task_order) != list(range(self.tasks)):
            raise ValueError(f"task_order must be a permutation of 0..{self.tasks - 1}")
        ds = self.dataset
        if isinstance(ds, GaussianDataset):
            if ds.class_count % self.tasks:
                raise ValueError(f"dataset.class_count={ds.class_count} not divisible by tasks={self.tasks}")
            if self.arch.class_count is not None and self.arch.class_count != ds.class_count:
                raise ValueError("arch.class_count must match dataset.class_count")
        return self

    def canonical(self):
        """JSON-ready dict with aliases, the form that gets echoed and hashed."""
        return self.model_dump(mode="json", by_alias=True)

    def config_hash(self):
        """Digest of the canonical config minus the seed (seeds share a hash)."""
        d = self.canonical()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def with_updates(self, **kw):
        d = self.canonical()
        d.update(kw)
        return parse_config(d)

    def train_settings(self):
        m = self.method_params
        return TrainSettings(
            batch_size=self.batch_size,
            optimizer=self.optimizer.kind,
            lr=self.optimizer.lr,
            momentum=self.optimizer.momentum,
            scenario=self.scenario,
            replay_fraction=self.replay_fraction,
            strict_only=self.strict_only,
            tau=self.tau,
            branch_hidden=self.arch.branch_hidden,
            branch_epochs=m.branch_epochs,
            branch_lr=m.branch_lr,
            branch_data_fraction=m.branch_data_fraction,
            ewc_lambda=m.lambda_,
            ewc_gamma=m.gamma,
            si_c=m.c,
            si_xi=m.xi,
        )

    def build_stream(self):
        ds = self.dataset
        if isinstance(ds, GaussianDataset):
            spec = GaussianSpec(
                class_count=ds.class_count,
                dims=ds.dims,
                stddev=ds.stddev,
                train_per_class=ds.train_per_class,
                test_per_class=ds.test_per_class,
                seed=self.seed if ds.seed is None else ds.seed,
                radius=ds.radius,
                means=ds.means,
            )
            return generate_gaussian_stream(spec, self.tasks, self.task_order)
        tf = TabularFile(ds.path, ds.kind, ds.labels_path, ds.test_path, ds.test_labels_path)
        stream = load_tabular_stream(tf, self.tasks, self.task_order, ds.test_fraction, self.seed)
        if self.arch.class_count is not None and self.arch.class_count != stream.class_count:
            raise ConfigValidationError(
                f"arch.class_count: {self.arch.class_count} does not match the {stream.class_count} "
                "classes found in the data"
            )
        return stream


def _format_errors(exc):
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "\n".join(lines)


def parse_config(data, base_dir=None):
    """Validate a dict; relative dataset paths resolve against ``base_dir``."""
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigValidationError(_format_errors(exc)) from None
    ds = cfg.dataset
    if base_dir is not None and isinstance(ds, TabularDataset):
        for name in ("path", "labels_path", "test_path", "test_labels_path"):
            p = getattr(ds, name)
            if p is not None and not Path(p).is_absolute():
                setattr(ds, name, str((Path(base_dir) / p).resolve()))
    return cfg


def load_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(data, path.parent)
