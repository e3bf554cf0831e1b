"""Benchmark orchestration: datasets, method runs, reports, curves, comparisons.

Every output except the optional timing file is a pure function of the
configuration.  Randomness is drawn from streams derived by hashing
``(seed, sample, purpose...)``, so results do not depend on worker count or
execution order.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .errors import ConfigError
from .methods import METHOD_KINDS, MethodSpec, run_method
from .metrics import RunRecord, error_transform
from .sampler import ReverseStepMode
from .scene import (
    CameraIntrinsics,
    PerturbationSpec,
    SceneConfig,
    generate_scene,
    initial_extrinsic,
    load_scene,
    render_projection_map,
    sample_perturbation,
    save_scene,
    write_depth_pgm,
)
from .schedule import build_cosine_schedule, logsnr_timesteps
from .surrogate import KINDS as SURROGATE_KINDS
from .surrogate import BoundSurrogate, SurrogateSpec

CONFIG_SCHEMA = "lsdcalib.bench/1"
DATASET_SCHEMA = "lsdcalib.dataset/1"
RUN_SCHEMA = "lsdcalib.run/1"

CURVE_COLUMNS = ("sample", "method", "step", "Rx", "Ry", "Rz", "tx", "ty", "tz", "rot_rmse", "trans_rmse")


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 0
    num_samples: int = 500
    scene: SceneConfig = field(default_factory=SceneConfig)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    surrogates: tuple[SurrogateSpec, ...] = (SurrogateSpec(kind="range_dependent"),)
    methods: tuple[MethodSpec, ...] = tuple(MethodSpec(k) for k in ("single", "naiter", "nlsd", "lsd"))
    total_steps: int = 1000
    s: float = 0.008
    nfe: int = 10
    output_dir: str = "out"

    def validate(self) -> None:
        if int(self.num_samples) != self.num_samples or self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.nfe < 1 or self.nfe > self.total_steps:
            raise ConfigError("nfe must be in [1, total_steps]")
        if not self.surrogates or not self.methods:
            raise ConfigError("at least one surrogate and one method are required")
        for group, what in ((self.surrogates, "surrogate"), (self.methods, "method")):
            names = [g.name for g in group]
            if len(set(names)) != len(names):
                raise ConfigError(f"duplicate {what} names: {names}")
        try:
            self.scene.validate()
            build_cosine_schedule(self.total_steps, self.s)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def dataset_fingerprint(self) -> dict:
        return {
            "schema": DATASET_SCHEMA,
            "seed": int(self.seed),
            "num_samples": int(self.num_samples),
            "scene": self.scene.to_dict(),
            "perturbation": asdict(self.perturbation),
        }

    def dataset_hash(self) -> str:
        return _hash_json(self.dataset_fingerprint())

    def method_specs(self) -> list[MethodSpec]:
        """Methods with the global nfe and the NLSD noise resolved."""
        out = []
        for m in self.methods:
            m = replace(m, nfe=self.nfe) if m.kind != "single" else m
            if m.kind == "nlsd" and m.nlsd_perturb_sigma is None:
                m = replace(m, nlsd_perturb_sigma=default_nlsd_sigma(self.perturbation))
            out.append(m)
        return out


def default_nlsd_sigma(pert: PerturbationSpec) -> tuple[float, ...]:
    """Standard deviation of the uniform perturbation prior, per twist component."""
    t = pert.trans_range / math.sqrt(3.0)
    r = math.radians(pert.rot_range) / math.sqrt(3.0)
    return (t, t, t, r, r, r)


def _hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def derive_rng(*parts) -> np.random.Generator:
    """Independent generator keyed by an arbitrary tuple of JSON-able parts."""
    digest = hashlib.sha256(json.dumps(list(parts), separators=(",", ":")).encode()).digest()
    words = np.frombuffer(digest, dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence(words.tolist()))


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

_SCENE_KEYS = {
    "num_points": int, "depth_min": float, "depth_max": float, "pixel_noise_sigma": float,
    "outlier_fraction": float, "gt_jitter_deg": float, "gt_jitter_m": float,
}  # fmt: skip
_INTRINSIC_KEYS = {"fx": float, "fy": float, "cx": float, "cy": float, "width": int, "height": int}
_SURROGATE_KEYS = {
    "lam": float, "sigma": float, "lam0": float, "k": float, "sigma0": float,
    "max_gn_iters": int, "huber_delta": float, "seed": int,
}  # fmt: skip


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _section(cp, name):
    return cp[name] if cp.has_section(name) else {}


def _typed(section, keys, where):
    out = {}
    for key, value in section.items():
        if key not in keys:
            raise ConfigError(f"[{where}] unknown key {key!r}")
        try:
            out[key] = keys[key](value)
        except ValueError as exc:
            raise ConfigError(f"[{where}] {key}: {exc}") from exc
    return out


def parse_config(text: str) -> BenchConfig:
    """Parse the INI benchmark configuration (see ``configs/default.ini``)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not cp.has_section("bench"):
        raise ConfigError("missing [bench] section")
    bench = dict(cp["bench"])
    schema = bench.pop("schema", None)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"config schema must be {CONFIG_SCHEMA!r}, got {schema!r}")

    try:
        seed = int(bench.pop("seed", 0))
        num_samples = int(bench.pop("num_samples", 500))
        nfe = int(bench.pop("nfe", 10))
        output_dir = bench.pop("output_dir", "out")
        surrogate_names = bench.pop("surrogates", "range_dependent").replace(",", " ").split()
        method_names = bench.pop("methods", "single naiter nlsd lsd").replace(",", " ").split()
        sched = dict(_section(cp, "schedule"))
        total_steps = int(sched.pop("total_steps", 1000))
        s = float(sched.pop("s", 0.008))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if bench:
        raise ConfigError(f"[bench] unknown keys {sorted(bench)}")
    if sched:
        raise ConfigError(f"[schedule] unknown keys {sorted(sched)}")

    scene_sec = dict(_section(cp, "scene"))
    intr = _typed({k: scene_sec.pop(k) for k in list(scene_sec) if k in _INTRINSIC_KEYS}, _INTRINSIC_KEYS, "scene")
    gt_t = scene_sec.pop("gt_translation", None)
    scene_kw = _typed(scene_sec, _SCENE_KEYS, "scene")
    try:
        if gt_t is not None:
            scene_kw["gt_translation"] = _floats(gt_t)
        scene_cfg = SceneConfig(intrinsics=CameraIntrinsics(**intr), **scene_kw)
        pert = PerturbationSpec(**_typed(_section(cp, "perturbation"), {"rot_range": float, "trans_range": float}, "perturbation"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    surrogates = []
    for name in surrogate_names:
        sec = dict(_section(cp, f"surrogate:{name}"))
        kind = sec.pop("kind", name)
        if kind not in SURROGATE_KINDS:
            raise ConfigError(f"surrogate {name!r}: unknown kind {kind!r}")
        try:
            surrogates.append(SurrogateSpec(kind=kind, name=name, **_typed(sec, _SURROGATE_KEYS, f"surrogate:{name}")))
        except ValueError as exc:
            raise ConfigError(f"surrogate {name!r}: {exc}") from exc

    methods = []
    for name in method_names:
        sec = dict(_section(cp, f"method:{name}"))
        kind = sec.pop("kind", name)
        if kind not in METHOD_KINDS:
            raise ConfigError(f"method {name!r}: unknown kind {kind!r}")
        kw = {}
        try:
            if "mode" in sec:
                kw["mode"] = ReverseStepMode.parse(sec.pop("mode"))
            if "nlsd_perturb_sigma" in sec:
                kw["nlsd_perturb_sigma"] = _floats(sec.pop("nlsd_perturb_sigma"))
            if sec:
                raise ConfigError(f"[method:{name}] unknown keys {sorted(sec)}")
            methods.append(MethodSpec(kind=kind, name=name, nfe=nfe, **kw))
        except ValueError as exc:
            raise ConfigError(f"method {name!r}: {exc}") from exc

    known = {"bench", "schedule", "scene", "perturbation"}
    known |= {f"surrogate:{n}" for n in surrogate_names} | {f"method:{n}" for n in method_names}
    extra = [sec for sec in cp.sections() if sec not in known]
    if extra:
        raise ConfigError(f"unused config sections {extra}")

    cfg = BenchConfig(
        seed=seed, num_samples=num_samples, scene=scene_cfg, perturbation=pert,
        surrogates=tuple(surrogates), methods=tuple(methods),
        total_steps=total_steps, s=s, nfe=nfe, output_dir=output_dir,
    )  # fmt: skip
    cfg.validate()
    return cfg


def load_config(path) -> BenchConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(cfg: BenchConfig) -> str:
    """Inverse of :func:`parse_config`."""
    sc = cfg.scene
    lines = [
        "[bench]",
        f"schema = {CONFIG_SCHEMA}",
        f"seed = {cfg.seed}",
        f"num_samples = {cfg.num_samples}",
        f"nfe = {cfg.nfe}",
        f"output_dir = {cfg.output_dir}",
        "surrogates = " + ", ".join(s.name for s in cfg.surrogates),
        "methods = " + ", ".join(m.name for m in cfg.methods),
        "",
        "[schedule]",
        f"total_steps = {cfg.total_steps}",
        f"s = {cfg.s!r}",
        "",
        "[scene]",
    ]
    for key in _SCENE_KEYS:
        lines.append(f"{key} = {getattr(sc, key)!r}")
    for key in _INTRINSIC_KEYS:
        lines.append(f"{key} = {getattr(sc.intrinsics, key)!r}")
    lines.append("gt_translation = " + " ".join(repr(v) for v in sc.gt_translation))
    lines += ["", "[perturbation]", f"rot_range = {cfg.perturbation.rot_range!r}",
              f"trans_range = {cfg.perturbation.trans_range!r}"]  # fmt: skip
    default = SurrogateSpec(kind="oracle")
    for s in cfg.surrogates:
        lines += ["", f"[surrogate:{s.name}]", f"kind = {s.kind}"]
        for key in _SURROGATE_KEYS:
            if getattr(s, key) != getattr(default, key):
                lines.append(f"{key} = {getattr(s, key)!r}")
    for m in cfg.methods:
        lines += ["", f"[method:{m.name}]", f"kind = {m.kind}"]
        if m.kind == "lsd":
            lines.append(f"mode = {m.mode.value}")
        if m.nlsd_perturb_sigma is not None:
            lines.append("nlsd_perturb_sigma = " + " ".join(repr(v) for v in m.nlsd_perturb_sigma))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def sample_name(i: int) -> str:
    return f"sample_{i:05d}"


def make_sample(cfg: BenchConfig, i: int):
    sid = sample_name(i)
    scene = generate_scene(cfg.scene, derive_rng(cfg.seed, sid, "scene"), scene_id=sid)
    xi = sample_perturbation(cfg.perturbation, derive_rng(cfg.seed, sid, "perturbation"))
    return scene, xi, initial_extrinsic(scene, xi)


def cmd_simulate(cfg: BenchConfig, out_dir) -> Path:
    """Write one scene file per sample plus ``manifest.json``; returns the manifest path."""
    cfg.validate()
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(cfg.num_samples):
        scene, xi, T0 = make_sample(cfg, i)
        rel = f"samples/{sample_name(i)}.jsonl"
        save_scene(scene, out / rel, extra={"perturbation": xi.tolist(), "initial_extrinsic": T0.tolist()})
        files.append(rel)
    manifest = {
        "schema": DATASET_SCHEMA,
        "seed": int(cfg.seed),
        "num_samples": int(cfg.num_samples),
        "config_hash": cfg.dataset_hash(),
        "config": cfg.dataset_fingerprint(),
        "samples": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(cfg: BenchConfig, dataset_dir) -> list[Path]:
    path = Path(dataset_dir) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid manifest: {exc}") from exc
    if manifest.get("config_hash") != cfg.dataset_hash():
        raise ConfigError(
            f"dataset {dataset_dir} was generated from a different configuration "
            f"(manifest hash {manifest.get('config_hash', '?')[:12]}, config {cfg.dataset_hash()[:12]})"
        )
    return [Path(dataset_dir) / rel for rel in manifest["samples"]]


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


@dataclass
class _Job:
    cfg: BenchConfig
    sample_path: str
    buffering: bool
    timing: bool
    dump_maps_dir: str | None


def _run_sample(job: _Job):
    cfg = job.cfg
    scene, header = load_scene(job.sample_path)
    T0 = np.array(header["initial_extrinsic"], dtype=np.float64)
    gt = scene.gt_extrinsic
    schedule = build_cosine_schedule(cfg.total_steps, cfg.s)
    init_err = error_transform(T0, gt)
    records, effs = [], []
    for sspec in cfg.surrogates:
        for mspec in cfg.method_specs():
            rng = derive_rng(cfg.seed, scene.scene_id, mspec.name, sspec.name, sspec.seed)
            bound = BoundSurrogate(scene, sspec, rng, buffering=job.buffering)
            plan = None if mspec.kind in ("single", "naiter") else logsnr_timesteps(schedule, mspec.nfe)
            start = time.perf_counter()
            traj = run_method(mspec, bound, T0, schedule, rng, plan)
            elapsed = time.perf_counter() - start
            records.append(
                RunRecord(
                    sample_id=scene.scene_id,
                    method=mspec.name,
                    surrogate=sspec.name,
                    errors_by_step=[error_transform(e, gt) for e in traj.estimates],
                    final_error=error_transform(traj.final, gt),
                    initial_error=init_err,
                    flagged=traj.flagged,
                    denoiser_failures=bound.flagged_calls,
                )
            )
            effs.append((scene.scene_id, sspec.name, mspec.name, bound.calls, bound.prepare_count, elapsed))
            if job.dump_maps_dir:
                _dump_maps(Path(job.dump_maps_dir), scene, T0, traj, sspec.name, mspec.name, cfg.scene.depth_max)
    return records, effs


def _dump_maps(out: Path, scene, T0, traj, surrogate_name, method_name, max_depth):
    out.mkdir(parents=True, exist_ok=True)
    base = scene.scene_id
    for tag, T in (("initial", T0), ("gt", scene.gt_extrinsic)):
        p = out / f"{base}_{tag}.pgm"
        if not p.exists():
            write_depth_pgm(render_projection_map(scene, T), p, max_depth)
    for i in (2, 5, 10):
        if i <= len(traj.estimates):
            grid = render_projection_map(scene, traj.estimates[i - 1])
            write_depth_pgm(grid, out / f"{base}_{surrogate_name}_{method_name}_nfe{i:02d}.pgm", max_depth)


def cmd_run(
    cfg: BenchConfig,
    dataset_dir,
    out_dir,
    jobs: int = 1,
    buffering: bool = True,
    timing: bool = False,
    dump_maps: int = 0,
) -> metrics.AggregateReport:
    """Run every (sample, surrogate, method) and write records and reports.

    Outputs in ``out_dir``: ``records.jsonl``, ``report.csv``, ``report.txt``,
    ``efficiency.csv`` and ``run.json``.  With ``timing`` the efficiency file
    also carries wall-clock columns, which are the only non-reproducible
    output.
    """
    cfg.validate()
    samples = load_dataset(cfg, dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps_dir = str(out / "maps")
    work = [
        _Job(cfg, str(p), buffering, timing, maps_dir if i < dump_maps else None)
        for i, p in enumerate(samples)
    ]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            results = list(pool.map(_run_sample, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_run_sample(j) for j in work]

    records = [r for recs, _ in results for r in recs]
    effs = [e for _, es in results for e in es]
    report = metrics.aggregate(records)

    with open(out / "records.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_text())
    _write_efficiency(out / "efficiency.csv", effs, timing)
    run_info = {
        "schema": RUN_SCHEMA,
        "dataset_hash": cfg.dataset_hash(),
        "config": json.loads(json.dumps(asdict(cfg), default=_json_default)),
        "surrogates": [s.name for s in cfg.surrogates],
        "methods": [m.name for m in cfg.methods],
    }
    (out / "run.json").write_text(json.dumps(run_info, indent=2, sort_keys=True) + "\n")
    return report


def _json_default(obj):
    if isinstance(obj, ReverseStepMode):
        return obj.value
    raise TypeError(type(obj))


def _write_efficiency(path: Path, effs, timing: bool) -> None:
    # per (surrogate, method): evaluations, prepare calls, optional wall time
    agg: dict[tuple[str, str], list] = {}
    for _, sname, mname, calls, prepares, elapsed in effs:
        a = agg.setdefault((sname, mname), [0, 0, 0, 0.0])
        a[0] += 1
        a[1] += calls
        a[2] += prepares
        a[3] += elapsed
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["surrogate", "method", "runs", "evaluations", "prepare_calls", "prepare_per_run"]
        if timing:
            header += ["wall_s_total", "wall_ms_per_run"]
        w.writerow(header)
        for (sname, mname), (runs, calls, prepares, elapsed) in agg.items():
            row = [sname, mname, runs, calls, prepares, f"{prepares / runs:.3f}"]
            if timing:
                row += [f"{elapsed:.6f}", f"{1e3 * elapsed / runs:.4f}"]
            w.writerow(row)


def load_records(run_dir) -> list[RunRecord]:
    path = Path(run_dir) / "records.jsonl"
    with open(path) as fh:
        return [RunRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# curves / compare
# ---------------------------------------------------------------------------


def curve_rows(records: list[RunRecord]) -> list[list]:
    rows = []
    for r in records:
        label = f"{r.surrogate}+{r.method}"
        for step, e in enumerate(r.errors_by_step, start=1):
            rows.append([r.sample_id, label, step, *e.as_row()])
    return rows


def cmd_curves(run_dir, out_path=None) -> Path:
    """Per-step error table for every record of a run (default ``<run>/curves.csv``)."""
    records = load_records(run_dir)
    out_path = Path(out_path) if out_path else Path(run_dir) / "curves.csv"
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in curve_rows(records):
            w.writerow(row[:3] + [repr(float(v)) for v in row[3:]])
    return out_path


# column -> True when larger is better
_COMPARE_COLUMNS = {
    "rot_rmse_mean": False,
    "rot_rmse_median": False,
    "trans_rmse_mean": False,
    "trans_rmse_median": False,
    "rate_3deg3cm": True,
    "rate_5deg5cm": True,
    "rho_percent": True,
}


def compare_runs(run_dirs) -> tuple[list[str], list[list[str]], list[dict]]:
    """Merge the reports of several runs over the same dataset.

    Returns ``(header, formatted rows, raw rows)``; the best value in each
    metric column carries a trailing ``*``.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    hashes = set()
    raw = []
    for d in run_dirs:
        info_path = d / "run.json"
        try:
            info = json.loads(info_path.read_text())
        except ValueError as exc:
            raise ConfigError(f"{info_path}: {exc}") from exc
        hashes.add(info["dataset_hash"])
        for row in metrics.aggregate(load_records(d)).rows:
            entry = {"run": d.name, "surrogate": row.surrogate, "method": row.method}
            entry.update({k: getattr(row, k) for k in _COMPARE_COLUMNS})
            raw.append(entry)
    if len(hashes) != 1:
        raise ConfigError("runs were produced from different datasets")

    def digits(col):
        return 4 if "rmse" in col else 2

    # best is judged on the displayed precision so visible ties are all marked
    best = {}
    for col, higher in _COMPARE_COLUMNS.items():
        vals = [round(e[col], digits(col)) for e in raw if e[col] is not None and not math.isnan(e[col])]
        if vals:
            best[col] = max(vals) if higher else min(vals)
    header = ["run", "surrogate", "method", *_COMPARE_COLUMNS]
    rows = []
    for e in raw:
        cells = [e["run"], e["surrogate"], e["method"]]
        for col in _COMPARE_COLUMNS:
            v = e[col]
            cell = metrics._fmt(v, digits(col))
            if v is not None and col in best and not math.isnan(v) and round(v, digits(col)) == best[col]:
                cell += "*"
            cells.append(cell)
        rows.append(cells)
    return header, rows, raw


def cmd_compare(run_dirs, out_path=None) -> str:
    header, rows, _ = compare_runs(run_dirs)
    text = metrics.format_table(header, rows)
    if out_path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        Path(out_path).write_text(buf.getvalue())
    return text
