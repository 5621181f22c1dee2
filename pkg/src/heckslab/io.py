"""Text formats: delimited data files, flat ``section.key = value`` config
files and the columnar draw file."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .gibbs import ChainOutput, GibbsConfig
from .model import DataError, Dataset
from .priors import FAMILIES, PriorSpec, default_calibration


class ConfigError(ValueError):
    """A config entry is malformed or violates a constraint; ``key`` names it."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataFileError(DataError):
    pass


MISSING_TOKENS = ("", "NA")


# ---------------------------------------------------------------------------
# data files

def _sniff_delimiter(header: str) -> str:
    for d in ("\t", ",", ";"):
        if d in header:
            return d
    return ","


def read_table(path, delimiter: str | None = None):
    """Header plus rows of raw strings. Returns ``(header, rows, line_nos)``."""
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataFileError(f"{path}: line 1: missing header row")
    delim = delimiter or _sniff_delimiter(lines[0])
    reader = csv.reader(lines, delimiter=delim)
    header = [h.strip() for h in next(reader)]
    if len(set(header)) != len(header):
        raise DataFileError(f"{path}: line 1: duplicate column names")
    rows, line_nos = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row) and len(row) <= 1:
            continue
        if len(row) != len(header):
            raise DataFileError(f"{path}: line {lineno}: expected {len(header)} fields, "
                                f"got {len(row)}")
        rows.append([c.strip() for c in row])
        line_nos.append(lineno)
    return header, rows, line_nos


def read_dataset(path, x_cols=None, w_cols=None, delimiter: str | None = None) -> Dataset:
    """Load a data file with columns ``s`` (0/1) and ``y`` (empty or ``NA``
    when missing). ``x_cols`` defaults to every other column and ``w_cols``
    to ``x_cols``."""
    header, rows, line_nos = read_table(path, delimiter)
    for col in ("s", "y"):
        if col not in header:
            raise DataFileError(f"{path}: line 1: required column {col!r} not found")
    others = [h for h in header if h not in ("s", "y")]
    x_cols = list(others if x_cols is None else x_cols)
    w_cols = list(x_cols if w_cols is None else w_cols)
    for c in x_cols + w_cols:
        if c not in header:
            raise DataFileError(f"{path}: line 1: column {c!r} not found")
    if not rows:
        raise DataFileError(f"{path}: no data rows")
    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    s = np.empty(n, dtype=bool)
    y = np.full(n, math.nan)
    cov_cols = list(dict.fromkeys(x_cols + w_cols))
    cov = np.empty((n, len(cov_cols)))
    for i, (row, lineno) in enumerate(zip(rows, line_nos)):
        tok = row[pos["s"]]
        if tok not in ("0", "1"):
            raise DataFileError(f"{path}: line {lineno}: column 's' must be 0 or 1, got {tok!r}")
        s[i] = tok == "1"
        tok = row[pos["y"]]
        if tok not in MISSING_TOKENS:
            try:
                y[i] = float(tok)
            except ValueError:
                raise DataFileError(f"{path}: line {lineno}: column 'y': cannot parse {tok!r}") from None
        if s[i] == np.isnan(y[i]):
            raise DataFileError(f"{path}: line {lineno}: y must be present exactly when s = 1")
        for k, c in enumerate(cov_cols):
            tok = row[pos[c]]
            try:
                cov[i, k] = float(tok)
            except ValueError:
                raise DataFileError(f"{path}: line {lineno}: column {c!r}: cannot parse {tok!r}") from None
            if not math.isfinite(cov[i, k]):
                raise DataFileError(f"{path}: line {lineno}: column {c!r}: non-finite value")
    idx = {c: k for k, c in enumerate(cov_cols)}
    X = cov[:, [idx[c] for c in x_cols]] if x_cols else np.zeros((n, 0))
    W = cov[:, [idx[c] for c in w_cols]] if w_cols else np.zeros((n, 0))
    return Dataset.from_arrays(X, W, s, y, x_names=tuple(x_cols), w_names=tuple(w_cols))


def write_dataset(path, data: Dataset, delimiter: str = ","):
    """Write a dataset in the format read by :func:`read_dataset`. Columns
    shared by name between the two equations are written once."""
    cols = list(dict.fromkeys(data.x_names + data.w_names))
    src = {}
    for j, c in enumerate(data.x_names):
        src[c] = data.X[:, j]
    for k, c in enumerate(data.w_names):
        src.setdefault(c, data.W[:, k])
    y = data.y_full()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(cols + ["s", "y"])
        for i in range(data.n):
            yi = repr(float(y.data[i])) if data.s[i] else "NA"
            w.writerow([repr(float(src[c][i])) for c in cols] + [int(data.s[i]), yi])


def standardize(data: Dataset) -> tuple[Dataset, dict]:
    """Center and scale every covariate column by its full-sample mean and sd
    (ddof = 0). Constant columns are centered only."""
    def scale(M):
        mu = M.mean(axis=0) if M.shape[1] else np.zeros(0)
        sd = M.std(axis=0) if M.shape[1] else np.zeros(0)
        sd = np.where(sd > 0, sd, 1.0)
        return (M - mu) / sd, mu, sd
    X, mx, sx = scale(data.X)
    W, mw, sw = scale(data.W)
    info = {"x_mean": mx, "x_sd": sx, "w_mean": mw, "w_sd": sw}
    return Dataset(X, W, data.s, data.y_obs, data.x_names, data.w_names), info


# ---------------------------------------------------------------------------
# config files

def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``section.key = value`` lines into ``{"section.key": "value"}``.
    Blank lines and lines starting with ``#`` are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"{source}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if "." not in key or not all(key.split(".")):
            raise ConfigError(key or f"line {lineno}", f"{source}: keys must look like section.key")
        if key in out:
            raise ConfigError(key, f"{source}: line {lineno}: duplicate key")
        out[key] = value.strip()
    return out


def read_config(path) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read(), str(path))


def _split_list(text: str) -> list:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def _typed(key, text, kind):
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind.__name__}") from None


RUN_KEYS = {"seed": int, "family": str, "context": str, "prior_class": int,
            "standardize": bool}
GIBBS_KEYS = {"iterations": int, "burn_in": int, "thin": int, "seed": int, "init": str,
              "keep_latent": bool}
DATA_KEYS = {"x": list, "w": list, "delimiter": str}
SCENARIO_KEYS = {"n": int, "p": int, "rho": float, "sigma": float, "alpha_effects": tuple,
                 "beta_effects": tuple, "target_missing": float, "beta0": float,
                 "replicates": int, "methods": tuple, "iterations": int, "burn_in": int,
                 "rho_prior_tau": float, "workers": int}


@dataclass
class RunConfig:
    """Everything a CLI run needs. ``prior_items`` are applied on top of the
    default calibration once the data dimensions are known."""

    seed: int = 0
    family: str = "normal"
    context: str = "application"
    prior_class: int = 1
    standardize: bool = True
    gibbs: dict = field(default_factory=dict)
    prior_items: dict = field(default_factory=dict)
    x_cols: list | None = None
    w_cols: list | None = None
    delimiter: str | None = None
    scenario: dict = field(default_factory=dict)

    def gibbs_config(self) -> GibbsConfig:
        kw = {"seed": self.seed, **self.gibbs}
        try:
            return GibbsConfig(**kw)
        except ValueError as exc:
            key = next((k for k in ("burn_in", "iterations", "thin", "init") if k in str(exc)),
                       "iterations")
            raise ConfigError(f"gibbs.{key}", str(exc)) from None

    def prior_spec(self, n: int, p: int, q: int) -> PriorSpec:
        base = default_calibration(n, max(p, 1), max(q, 1), family=self.family,
                                   context=self.context, prior_class=self.prior_class)
        spec = base
        for key, text in self.prior_items.items():
            try:
                spec = PriorSpec.from_items({key: text}, base=spec)
            except KeyError:
                raise ConfigError(f"prior.{key}", "unknown key") from None
            except ValueError as exc:
                raise ConfigError(f"prior.{key}", str(exc)) from None
        return spec

    def scenario_config(self):
        from .simharness import ScenarioConfig
        kw = dict(self.scenario)
        for name in list(kw):
            cfg_fields = {f.name for f in fields(ScenarioConfig)}
            if name not in cfg_fields:
                raise ConfigError(f"scenario.{name}", "unknown key")
        try:
            cfg = ScenarioConfig(**kw)
        except ValueError as exc:
            msg = str(exc)
            key = next((k for k in SCENARIO_KEYS if msg.startswith(k) or f" {k} " in f" {msg} "
                        or msg.startswith(f"|{k}")), None)
            raise ConfigError(f"scenario.{key or 'config'}", msg) from None
        return cfg


def _check_run_values(cfg: RunConfig):
    if cfg.family not in FAMILIES:
        raise ConfigError("run.family", f"must be one of {FAMILIES}, got {cfg.family!r}")
    if cfg.context not in ("simulation", "application"):
        raise ConfigError("run.context", f"must be 'simulation' or 'application', got {cfg.context!r}")
    if cfg.prior_class not in (1, 2):
        raise ConfigError("run.prior_class", f"must be 1 or 2, got {cfg.prior_class}")


def _check_scenario_values(sc: dict):
    """Range checks that name the offending key."""
    checks = {
        "n": lambda v: v >= 2, "p": lambda v: v >= 1,
        "rho": lambda v: -1 < v < 1, "sigma": lambda v: v > 0,
        "target_missing": lambda v: 0 < v < 1, "replicates": lambda v: v >= 0,
        "rho_prior_tau": lambda v: v > 0, "workers": lambda v: v >= 1,
        "iterations": lambda v: v >= 1, "burn_in": lambda v: v >= 0,
    }
    for key, ok in checks.items():
        if key in sc and not ok(sc[key]):
            raise ConfigError(f"scenario.{key}", f"value {sc[key]!r} out of range")


def build_run_config(items: dict, base: RunConfig | None = None) -> RunConfig:
    """Validate parsed config entries into a :class:`RunConfig`."""
    cfg = replace(base) if base is not None else RunConfig()
    cfg.gibbs = dict(cfg.gibbs)
    cfg.prior_items = dict(cfg.prior_items)
    cfg.scenario = dict(cfg.scenario)
    prior_names = {f.name for f in fields(PriorSpec)}
    for key, text in items.items():
        section, _, name = key.partition(".")
        if section == "run" and name in RUN_KEYS:
            setattr(cfg, name, _typed(key, text, RUN_KEYS[name]))
        elif section == "gibbs" and name in GIBBS_KEYS:
            cfg.gibbs[name] = _typed(key, text, GIBBS_KEYS[name])
        elif section == "prior" and name in prior_names:
            cfg.prior_items[name] = text
        elif section == "data" and name in DATA_KEYS:
            if name == "delimiter":
                cfg.delimiter = {"tab": "\t", "\\t": "\t"}.get(text, text)
            else:
                setattr(cfg, f"{name}_cols", _split_list(text))
        elif section == "scenario" and name in SCENARIO_KEYS:
            kind = SCENARIO_KEYS[name]
            if kind is tuple:
                parts = _split_list(text)
                if name == "methods":
                    cfg.scenario[name] = tuple(parts)
                else:
                    cfg.scenario[name] = tuple(_typed(key, t, float) for t in parts)
            else:
                cfg.scenario[name] = _typed(key, text, kind)
        else:
            raise ConfigError(key, "unknown key")
    _check_run_values(cfg)
    _check_scenario_values(cfg.scenario)
    for name, text in cfg.prior_items.items():
        # early syntax check; range checks happen once dimensions are known
        try:
            PriorSpec.from_items({name: text}, base=PriorSpec(tau0_beta=1e-9, tau0_alpha=1e-9))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"prior.{name}", str(exc)) from None
    return cfg


def load_run_config(path=None, base: RunConfig | None = None) -> RunConfig:
    items = read_config(path) if path is not None else {}
    return build_run_config(items, base)


def format_config(cfg: RunConfig, prior: PriorSpec | None = None) -> str:
    """Config text reproducing ``cfg`` (and the resolved prior, if given)."""
    lines = [f"run.seed = {cfg.seed}", f"run.family = {cfg.family}",
             f"run.context = {cfg.context}", f"run.prior_class = {cfg.prior_class}",
             f"run.standardize = {str(cfg.standardize).lower()}"]
    lines += [f"gibbs.{k} = {v}" for k, v in cfg.gibbs.items()]
    if cfg.x_cols is not None:
        lines.append(f"data.x = {', '.join(cfg.x_cols)}")
    if cfg.w_cols is not None:
        lines.append(f"data.w = {', '.join(cfg.w_cols)}")
    items = prior.to_items() if prior is not None else cfg.prior_items
    lines += [f"prior.{k} = {v}" for k, v in items.items()]
    for k, v in cfg.scenario.items():
        text = ", ".join(str(t) for t in v) if isinstance(v, tuple) else str(v)
        lines.append(f"scenario.{k} = {text}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# draw files

def draw_columns(q: int, p: int) -> list:
    return (["alpha0"] + [f"alpha.{k}" for k in range(1, q + 1)] + ["beta0"]
            + [f"beta.{j}" for j in range(1, p + 1)] + ["rho_tilde", "sigma_tilde_sq"]
            + [f"gamma_S.{k}" for k in range(1, q + 1)]
            + [f"gamma_O.{j}" for j in range(1, p + 1)] + ["r"])


def draw_matrix(chain: ChainOutput) -> np.ndarray:
    return np.column_stack([chain.alpha0, chain.alpha, chain.beta0, chain.beta,
                            chain.rho_tilde, chain.sigma_tilde_sq,
                            chain.gamma_S, chain.gamma_O, chain.r])


def write_draws(path, chain: ChainOutput):
    """Tab-separated, one row per draw; floats at full round-trip precision."""
    q, p = chain.q, chain.p
    cols = draw_columns(q, p)
    int_cols = set(range(2 + q + 1 + p + 1, 2 + q + 1 + p + 1 + q + p))
    with open(path, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in draw_matrix(chain):
            fh.write("\t".join(str(int(v)) if i in int_cols else repr(float(v))
                               for i, v in enumerate(row)) + "\n")


def read_draws(path, x_names=(), w_names=()) -> ChainOutput:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        q = sum(1 for h in header if h.startswith("alpha."))
        p = sum(1 for h in header if h.startswith("beta."))
        if header != draw_columns(q, p):
            raise DataFileError(f"{path}: line 1: unexpected draw-file header")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(header):
                raise DataFileError(f"{path}: line {lineno}: expected {len(header)} fields")
            try:
                rows.append([float(t) for t in parts])
            except ValueError:
                raise DataFileError(f"{path}: line {lineno}: unparseable value") from None
    M = np.array(rows, dtype=float).reshape(-1, len(header))
    i = 0

    def take(k):
        nonlocal i
        out = M[:, i:i + k]
        i += k
        return out
    alpha0 = take(1)[:, 0]
    alpha = take(q)
    beta0 = take(1)[:, 0]
    beta = take(p)
    rho_tilde = take(1)[:, 0]
    s2 = take(1)[:, 0]
    gS = take(q).astype(np.int8)
    gO = take(p).astype(np.int8)
    r = take(1)[:, 0]
    return ChainOutput(alpha0, alpha, beta0, beta, rho_tilde, s2, gS, gO, r,
                       x_names=tuple(x_names), w_names=tuple(w_names))
