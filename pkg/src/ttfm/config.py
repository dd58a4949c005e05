"""Run configuration: an INI file whose sections mirror the pipeline stages.

Every key has a default, so an empty file (or none) is a valid config.
Unknown sections or keys and unparsable values raise ``ConfigError``.
See ``DEFAULTS`` for the full list; README documents each section.
"""

import configparser
import datetime as dt
import zlib

import numpy as np

from .errors import ConfigError
from .evaluation import DEFAULT_BANDS, SplitSpec
from .inference import FitConfig
from .model import PriorSpec
from .pipeline import PipelineConfig

DEFAULTS = {
    "run": {"seed": "0"},
    "paths": {"data": "data", "fit": "fit", "pings": "", "restaurants": "", "homes": "",
              "area": "", "events": ""},
    "synth": {"n_users": "200", "n_restaurants": "100", "n_weeks": "20",
              "visits_per_user": "20", "visits_distribution": "fixed", "k1": "8", "k2": "4",
              "k3": "5", "box_miles": "10.0", "n_clusters": "0", "n_categories": "6",
              "churn_fraction": "0.1", "distance_loading_mean": "0.0", "pings": "false",
              "noise": "0.0", "sampler": "categorical"},
    "pipeline": {"sample_start": "2017-01-02", "sample_end": "2017-10-31",
                 "min_active_weeks": "12", "min_pings_per_week": "10",
                 "min_share_in_area": "0.8", "min_share_broad": "0.6",
                 "min_share_narrow": "0.4", "require_home": "true", "min_visit_pings": "2",
                 "min_dwell_minutes": "3", "max_distance_miles": "20",
                 "distance_floor_miles": "0.01", "min_user_visits": "3",
                 "min_weekly_restaurant_visits": "1", "min_total_restaurant_visits": "5"},
    "model": {"kind": "ttfm", "k1": "8", "k2": "4", "k3": "5", "grid": ""},
    "prior": {"var_lambda": "1.0", "var_theta": "1.0", "var_gamma": "0.1", "var_mu": "0.01",
              "var_delta": "0.01", "var_H": "1.0", "sigma2_alpha": "1.0",
              "sigma2_beta": "1.0"},
    "fit": {"minibatch_size": "512", "n_mc_samples": "1", "step_size": "0.01",
            "max_steps": "5000", "eval_every": "100", "window": "5", "tol": "1e-4"},
    "split": {"train": "0.706", "validation": "0.050", "test": "0.244"},
    "report": {"bands": ",".join(f"{b:g}" for b in DEFAULT_BANDS), "models": "ttfm,mnl",
               "elasticity": "mean", "n_draws": "50"},
    "counterfactual": {"mode": "redistribution", "model": "ttfm", "radius_miles": "3.0",
                       "min_consideration": "500", "n_alternatives": "100",
                       "rep_band_sd": "0.1", "category_groups": "",
                       "sessions_start": "", "sessions_end": ""},
    "similar": {"restaurant_id": "", "n": "10", "space": "latent", "model": "ttfm"},
}


def derive_seed(root, component, index=0):
    """Independent 64-bit seed for a named component of a run."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(component.encode()), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


class RunConfig:
    def __init__(self, parser):
        self._p = parser

    @classmethod
    def load(cls, path=None, seed=None):
        p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        p.optionxform = str
        p.read_dict(DEFAULTS)
        if path:
            user = configparser.ConfigParser(interpolation=None,
                                             inline_comment_prefixes=(";", "#"))
            user.optionxform = str
            try:
                with open(path) as fh:
                    user.read_file(fh)
            except OSError as exc:
                raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            for sec in user.sections():
                if sec not in DEFAULTS:
                    raise ConfigError(f"{path}: unknown section [{sec}]")
                for key, value in user.items(sec):
                    if key not in DEFAULTS[sec]:
                        raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
                    p.set(sec, key, value)
        if seed is not None:
            p.set("run", "seed", str(seed))
        return cls(p)

    def get(self, section, key):
        return self._p.get(section, key).strip()

    def _typed(self, section, key, conv):
        raw = self.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError):
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None

    def int(self, section, key):
        return self._typed(section, key, int)

    def float(self, section, key):
        return self._typed(section, key, float)

    def bool(self, section, key):
        def conv(v):
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        return self._typed(section, key, conv)

    def date(self, section, key):
        return self._typed(section, key, dt.date.fromisoformat)

    def floats(self, section, key):
        return self._typed(section, key,
                           lambda v: tuple(float(x) for x in v.split(",") if x.strip()))

    def words(self, section, key):
        return tuple(w.strip() for w in self.get(section, key).split(",") if w.strip())

    @property
    def seed(self):
        s = self.int("run", "seed")
        if s < 0:
            raise ConfigError("[run] seed must be non-negative")
        return s

    def resolved(self):
        return {sec: dict(self._p.items(sec)) for sec in DEFAULTS}

    # typed views --------------------------------------------------------

    def synth_spec(self):
        from .synthesis import SynthSpec

        return SynthSpec(
            n_users=self.int("synth", "n_users"),
            n_restaurants=self.int("synth", "n_restaurants"),
            n_weeks=self.int("synth", "n_weeks"),
            visits_per_user=self.int("synth", "visits_per_user"),
            visits_distribution=self.get("synth", "visits_distribution"),
            k1=self.int("synth", "k1"), k2=self.int("synth", "k2"), k3=self.int("synth", "k3"),
            prior=self.prior(), box_miles=self.float("synth", "box_miles"),
            n_clusters=self.int("synth", "n_clusters"),
            n_categories=self.int("synth", "n_categories"),
            churn_fraction=self.float("synth", "churn_fraction"),
            distance_loading_mean=self.float("synth", "distance_loading_mean"),
            sample_start=self.date("pipeline", "sample_start"),
            seed=self.seed)

    def pipeline_config(self):
        c = PipelineConfig(
            sample_start=self.date("pipeline", "sample_start"),
            sample_end=self.date("pipeline", "sample_end"),
            min_active_weeks=self.int("pipeline", "min_active_weeks"),
            min_pings_per_week=self.float("pipeline", "min_pings_per_week"),
            min_share_in_area=self.float("pipeline", "min_share_in_area"),
            min_share_broad=self.float("pipeline", "min_share_broad"),
            min_share_narrow=self.float("pipeline", "min_share_narrow"),
            require_home=self.bool("pipeline", "require_home"),
            min_visit_pings=self.int("pipeline", "min_visit_pings"),
            min_dwell_minutes=self.float("pipeline", "min_dwell_minutes"),
            max_distance_miles=self.float("pipeline", "max_distance_miles"),
            distance_floor_miles=self.float("pipeline", "distance_floor_miles"),
            min_user_visits=self.int("pipeline", "min_user_visits"),
            min_weekly_restaurant_visits=self.float("pipeline", "min_weekly_restaurant_visits"),
            min_total_restaurant_visits=self.int("pipeline", "min_total_restaurant_visits"))
        if c.sample_end < c.sample_start:
            raise ConfigError("[pipeline] sample_end precedes sample_start")
        return c

    def prior(self):
        try:
            return PriorSpec(**{k: self.float("prior", k) for k in DEFAULTS["prior"]})
        except ValueError as exc:
            raise ConfigError(f"[prior] {exc}") from None

    def fit_config(self, seed):
        try:
            return FitConfig(minibatch_size=self.int("fit", "minibatch_size"),
                             n_mc_samples=self.int("fit", "n_mc_samples"),
                             step_size=self.float("fit", "step_size"),
                             max_steps=self.int("fit", "max_steps"),
                             eval_every=self.int("fit", "eval_every"),
                             window=self.int("fit", "window"), tol=self.float("fit", "tol"),
                             seed=seed)
        except ValueError as exc:
            raise ConfigError(f"[fit] {exc}") from None

    def split_spec(self):
        try:
            return SplitSpec(self.float("split", "train"), self.float("split", "validation"),
                             self.float("split", "test"), seed=derive_seed(self.seed, "split"))
        except ValueError as exc:
            raise ConfigError(f"[split] {exc}") from None

    def model_kinds(self):
        kind = self.get("model", "kind")
        kinds = {"ttfm": ("ttfm",), "mnl": ("mnl",), "both": ("ttfm", "mnl")}.get(kind)
        if kinds is None:
            raise ConfigError(f"[model] kind must be ttfm, mnl or both, got {kind!r}")
        return kinds

    def dims_grid(self):
        """(k1, k2) candidates: the [model] grid list or the single configured pair."""
        raw = self.get("model", "grid")
        if not raw:
            return [(self.int("model", "k1"), self.int("model", "k2"))]
        out = []
        for item in raw.split(","):
            try:
                a, b = item.strip().lower().split("x")
                out.append((int(a), int(b)))
            except ValueError:
                raise ConfigError(f"[model] grid entry {item!r} is not K1xK2") from None
        return out

    def bands(self):
        edges = self.floats("report", "bands")
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] != 0:
            raise ConfigError("[report] bands must start at 0 and increase strictly")
        return edges

    def elasticity_draws(self):
        """Number of posterior draws for elasticities; 0 means use posterior means."""
        mode = self.get("report", "elasticity")
        if mode == "mean":
            return 0
        if mode != "draws":
            raise ConfigError(f"[report] elasticity must be mean or draws, got {mode!r}")
        n = self.int("report", "n_draws")
        if n < 1:
            raise ConfigError("[report] n_draws must be positive")
        return n

    def category_groups(self):
        """``name:cat1;cat2 | name2:...`` to {name: (cats)}; empty means one group of all."""
        raw = self.get("counterfactual", "category_groups")
        out = {}
        for part in raw.split("|"):
            if not part.strip():
                continue
            name, sep, cats = part.partition(":")
            if not sep:
                raise ConfigError(f"[counterfactual] category group {part!r} lacks a name")
            out[name.strip()] = tuple(c.strip() for c in cats.split(";") if c.strip())
        return out
