"""``ttfm`` command line: synth, ingest, fit, report, counterfactual, similar.

Each command reads an INI config (``--config``), writes its outputs into
``--out`` and records a manifest of the resolved config, input digests and
output digests. Outputs depend only on (config, inputs, seed), so reruns
are byte-identical. Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys

logger = logging.getLogger("ttfm")

COMMANDS = ("synth", "ingest", "fit", "report", "counterfactual", "similar")


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _version():
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


class Run:
    """Per-command context: config, output dir, input/output bookkeeping."""

    def __init__(self, command, cfg, out):
        self.command, self.cfg, self.out = command, cfg, out
        self.inputs, self.outputs = {}, []
        os.makedirs(out, exist_ok=True)

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def used(self, *paths):
        for p in paths:
            if p and os.path.exists(p):
                self.inputs[os.path.normpath(p)] = _digest(p)

    def write_manifest(self, extra=None):
        from .snapshot import atomic_write_text

        doc = {"command": self.command, "code_version": _version(), "seed": self.cfg.seed,
               "config": self.cfg.resolved(), "inputs": dict(sorted(self.inputs.items())),
               "outputs": {n: _digest(os.path.join(self.out, n)) for n in sorted(set(self.outputs))}}
        if extra:
            doc.update(extra)
        atomic_write_text(os.path.join(self.out, f"manifest_{self.command}.json"),
                          json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _rng(cfg, component, index=0):
    import numpy as np

    from .config import derive_seed

    return np.random.default_rng(derive_seed(cfg.seed, component, index))


# ------------------------------------------------------------------- synth

def cmd_synth(run):
    import datetime as dt

    from . import io
    from .counterfactuals import OpenCloseEvent
    from .snapshot import save_params
    from .synthesis import generate_ground_truth, simulate_pings, simulate_visits

    cfg = run.cfg
    spec = cfg.synth_spec()
    truth, obs, geometry = generate_ground_truth(spec, _rng(cfg, "synth-truth"))
    visits = simulate_visits(truth, geometry, spec, _rng(cfg, "synth-visits"),
                             method=cfg.get("synth", "sampler"))
    io.write_restaurants(run.path("restaurants.csv"), geometry.restaurants)
    io.write_visits(run.path("visits.csv"), visits)
    io.write_choice_sets(run.path("choice_sets.csv"), geometry.choice_sets)
    io.write_morning(run.path("morning.csv"), geometry.morning)
    io.write_homes(run.path("homes.csv"), geometry.homes)
    io.write_area(run.path("area.txt"), geometry.area)
    events = []
    one = dt.timedelta(days=1)
    for r in geometry.restaurants:
        change = r.open_date or r.close_date
        if change is None:
            continue
        kind = "opening" if r.open_date else "closing"
        events.append(OpenCloseEvent(r.restaurant_id, kind, change,
                                     (spec.sample_start, change - one), (change, spec.sample_end)))
    io.write_events(run.path("events.csv"), events)
    meta = {"model": "ttfm", "k1": spec.k1, "k2": spec.k2, "k3": spec.k3,
            "k_obs": obs.layout.k_obs, "users": ",".join(geometry.user_ids),
            "restaurants": ",".join(r.restaurant_id for r in geometry.restaurants)}
    save_params(run.path("truth.snapshot"), truth.as_dict(), meta)
    if cfg.bool("synth", "pings"):
        pings = simulate_pings(visits, geometry, cfg.float("synth", "noise"),
                               _rng(cfg, "synth-pings"))
        io.write_pings(run.path("pings.csv"), pings)
    logger.info("synthesised %d users, %d restaurants, %d visits", len(geometry.user_ids),
                len(geometry.restaurants), len(visits))


# ------------------------------------------------------------------ ingest

def cmd_ingest(run):
    from collections import Counter

    from . import io
    from .errors import ConfigError, DataError
    from .pipeline import (RestaurantIndex, build_choice_set, dedupe_restaurants,
                           detect_visits, filter_estimation_sample, filter_user_base)

    cfg = run.cfg
    pc = cfg.pipeline_config()
    paths = {k: cfg.get("paths", k) for k in ("pings", "restaurants", "homes", "area")}
    for k in ("pings", "restaurants", "area"):
        if not paths[k]:
            raise ConfigError(f"[paths] {k} is required for ingest")
    run.used(*paths.values())
    pings = io.read_pings(paths["pings"])
    raw = io.read_restaurants(paths["restaurants"])
    area = io.read_area(paths["area"])
    homes = io.read_homes(paths["homes"]) if paths["homes"] else {}
    summary = []

    def stage(name, users, restaurants, visits):
        summary.append({"stage": name, "users": users, "restaurants": restaurants,
                        "visits": visits})

    restaurants = dedupe_restaurants(raw)
    users_pings = io.group_pings(pings)
    stage("raw", len(users_pings), len(raw), 0)
    stage("restaurants-deduplicated", len(users_pings), len(restaurants), 0)
    base = filter_user_base(users_pings, area, pc, homes)
    stage("user-base", len(base.users), len(restaurants), 0)
    index = RestaurantIndex(restaurants)
    visits = []
    for u in base.users:
        visits.extend(detect_visits(users_pings[u], index, base.morning[u], homes.get(u), pc))
    stage("visits-detected", len(base.users), len({v.restaurant_id for v in visits}), len(visits))
    by_id = {r.restaurant_id: r for r in restaurants}
    outside = 0
    choice_sets = {}
    while True:
        visits, users, rest_ids = filter_estimation_sample(visits, pc, base.users)
        pool = [by_id[r] for r in rest_ids]
        choice_sets = {}
        for u in users:
            try:
                choice_sets[u] = build_choice_set(base.morning[u], pool, pc)
            except DataError:
                continue
        keep = [v for v in visits if v.user_id in choice_sets
                and v.restaurant_id in choice_sets[v.user_id].restaurant_ids]
        if len(keep) == len(visits):
            break
        outside += len(visits) - len(keep)
        visits = keep
    stage("estimation-sample", len(choice_sets), len({v.restaurant_id for v in visits}),
          len(visits))
    kept_rest = sorted({r for cs in choice_sets.values() for r in cs.restaurant_ids})
    io.write_visits(run.path("visits.csv"), visits)
    io.write_choice_sets(run.path("choice_sets.csv"), choice_sets.values())
    io.write_morning(run.path("morning.csv"), {u: base.morning[u] for u in choice_sets})
    io.write_restaurants(run.path("restaurants.csv"), [by_id[r] for r in kept_rest])
    io.write_csv(run.path("rejections.csv"), ("user_id", "reason"),
                 sorted(base.rejections.items()))
    counts = Counter(base.rejections.values())
    io.write_csv(run.path("rejection_summary.csv"), ("reason", "users"),
                 sorted(counts.items()) + [("visit-outside-choice-set", outside)])
    io.write_table(run.path("ingest_summary.csv"), summary,
                   ("stage", "users", "restaurants", "visits"))
    for row in summary:
        logger.info("%-26s users %6d restaurants %6d visits %7d", row["stage"], row["users"],
                    row["restaurants"], row["visits"])


# --------------------------------------------------------------------- fit

def _dataset(run):
    from .workspace import load_dataset

    ds = load_dataset(run.cfg.get("paths", "data"), run.cfg.pipeline_config())
    run.used(*ds.paths.values())
    return ds


def _write_trace(path, trace):
    from . import io

    io.write_csv(path, ("step", "elbo", "val_loglik"), trace.values())


def cmd_fit(run, model_kind=None):
    from . import io
    from .evaluation import split_indices
    from .inference import fit, posterior_mean_params
    from .snapshot import save_posterior
    from .workspace import make_model, snapshot_path

    cfg = run.cfg
    ds = _dataset(run)
    panel = ds.panel
    parts = split_indices(panel.users, cfg.split_spec())
    names = ("train", "validation", "test")
    label = [None] * panel.n_visits
    for name, ix in zip(names, parts):
        for i in ix:
            label[i] = name
    io.write_csv(run.path("split.csv"), ("user_id", "restaurant_id", "date", "part"),
                 ((v.user_id, v.restaurant_id, v.date, label[n])
                  for n, v in enumerate(ds.visits)))
    train, valid = panel.subset(parts[0]), panel.subset(parts[1])
    kinds = {"ttfm": ("ttfm",), "mnl": ("mnl",), "both": ("ttfm", "mnl")}.get(
        model_kind) or cfg.model_kinds()
    prior = cfg.prior()
    k3 = cfg.int("model", "k3")
    for kind in kinds:
        grid = cfg.dims_grid() if kind == "ttfm" else [(0, 0)]
        results = []
        for gi, (k1, k2) in enumerate(grid):
            try:
                model = make_model(kind, ds, k1, k2, k3, prior)
            except ValueError as exc:
                from .errors import ConfigError
                raise ConfigError(f"[model] {exc}") from None
            fc = cfg.fit_config(_seed(cfg, f"fit-{kind}", gi))
            q, trace = fit(model, train, fc, valid=valid if valid.n_visits else None)
            score = (model.loglik(posterior_mean_params(q), valid) if valid.n_visits
                     else model.loglik(posterior_mean_params(q), train))
            tag = f"_{k1}x{k2}" if kind == "ttfm" and len(grid) > 1 else ""
            _write_trace(run.path(f"trace_{kind}{tag}.csv"), trace)
            for row in trace.rows:
                logger.debug("%s%s step %d at %.2fs", kind, tag, row.step, row.seconds)
            results.append((score, gi, k1, k2, q, trace))
            logger.info("%s k1=%d k2=%d: validation log-likelihood %.4f after %d steps",
                        kind, k1, k2, score, trace.rows[-1].step if trace.rows else 0)
        if kind == "ttfm" and len(grid) > 1:
            io.write_csv(run.path("grid_ttfm.csv"), ("k1", "k2", "val_loglik", "steps"),
                         ((r[2], r[3], float(r[0]), r[5].rows[-1].step if r[5].rows else 0)
                          for r in results))
        best = max(results, key=lambda r: (r[0], -r[1]))
        score, _, k1, k2, q, trace = best
        meta = {"model": kind, "k1": k1, "k2": k2, "k3": k3, "k_obs": ds.obs.layout.k_obs,
                "n_users": panel.n_users, "n_restaurants": panel.n_restaurants,
                "n_weeks": panel.n_weeks, "val_loglik": repr(float(score))}
        run.outputs.append(os.path.basename(snapshot_path(run.out, kind)))
        save_posterior(snapshot_path(run.out, kind), q, meta)


def _seed(cfg, component, index=0):
    from .config import derive_seed

    return derive_seed(cfg.seed, component, index)


# ------------------------------------------------------------------ report

def _fitted_kinds(cfg, fit_dir):
    from .workspace import snapshot_path

    kinds = [k for k in cfg.words("report", "models") if os.path.exists(snapshot_path(fit_dir, k))]
    if not kinds:
        from .errors import DataError
        raise DataError(f"{fit_dir}: no fitted snapshots for models "
                        f"{','.join(cfg.words('report', 'models'))}")
    return kinds


def cmd_report(run):
    from . import geo, io
    from .evaluation import (elasticity_records, elasticity_summary, mean_loglik,
                             observable_groups, precision_at_k, share_by_decile,
                             share_by_distance, variance_decomposition)
    from .inference import posterior_draws
    from .snapshot import load_posterior
    from .workspace import load_fitted, read_split, snapshot_path

    cfg = run.cfg
    n_draws = cfg.elasticity_draws()
    ds = _dataset(run)
    fit_dir = cfg.get("paths", "fit")
    split_path = os.path.join(fit_dir, "split.csv")
    run.used(split_path)
    train, valid, test = read_split(split_path, ds.panel.n_visits)
    bands = cfg.bands()
    recs = ds.records
    keys = {
        "category": {r.restaurant_id: r.major_category for r in recs},
        "price": {r.restaurant_id: "$" * r.price_range for r in recs if r.price_range},
        "city": {r.restaurant_id: r.city for r in recs if r.city},
        "geohash6": {r.restaurant_id: geo.encode(r.lat, r.lon, 6) for r in recs},
    }
    summary = []
    for kind in _fitted_kinds(cfg, fit_dir):
        run.used(snapshot_path(fit_dir, kind))
        model, params, meta = load_fitted(fit_dir, kind, ds, cfg.prior())
        p = ds.panel
        row = {"model": kind, "k1": meta.get("k1", ""), "k2": meta.get("k2", ""),
               "n_test": len(test),
               "loglik_test": model.loglik(params, p, test),
               "mean_loglik_test": mean_loglik(model, params, p, test),
               "loglik_validation": model.loglik(params, p, valid) if len(valid) else None}
        for k in (1, 5, 10):
            row[f"precision_at_{k}"] = precision_at_k(model, params, p, k, test)
        summary.append(row)
        draws = None
        if n_draws:
            _, q = load_posterior(snapshot_path(fit_dir, kind))
            draws = posterior_draws(q, n_draws, _rng(cfg, f"elasticity-{kind}"))
        er = elasticity_records(model, params, p, draws=draws)
        rows = []
        for g in ("overall", "by-user", "by-item"):
            rows += elasticity_summary(er, g)
        io.write_table(run.path(f"elasticity_summary_{kind}.csv"), rows)
        for g, km in keys.items():
            if km:
                io.write_table(run.path(f"elasticity_by_{g}_{kind}.csv"),
                               elasticity_summary(er, f"by-{g}", km))
        io.write_table(run.path(f"share_by_distance_{kind}.csv"),
                       share_by_distance(model, params, p, bands, test))
        for axis in ("restaurant-frequency", "user-frequency"):
            io.write_table(run.path(f"share_by_decile_{axis.split('-')[0]}_{kind}.csv"),
                           share_by_decile(model, params, p, test, train, axis))
        if kind == "ttfm":
            io.write_table(run.path("variance_decomposition_ttfm.csv"),
                           variance_decomposition(model.mean_utility(params),
                                                  observable_groups(ds.obs, recs)))
    io.write_table(run.path("fit_summary.csv"), summary)


# ---------------------------------------------------------- counterfactual

def _sessions(cfg, ds):
    """Visit indices inside the optional [counterfactual] session window."""
    import numpy as np

    lo = cfg.get("counterfactual", "sessions_start")
    hi = cfg.get("counterfactual", "sessions_end")
    lo = cfg.date("counterfactual", "sessions_start") if lo else None
    hi = cfg.date("counterfactual", "sessions_end") if hi else None
    keep = [n for n, v in enumerate(ds.visits)
            if (lo is None or v.date >= lo) and (hi is None or v.date <= hi)]
    return np.asarray(keep, dtype=np.int64)


def cmd_counterfactual(run, mode=None):
    import numpy as np

    from . import io
    from .counterfactuals import (actual_redistribution, alternative_comparison, all_demands,
                                  band_labels, best_category_map, best_location_map, build_cohort,
                                  counterfactual_demand, event_summary, predicted_demand,
                                  redistribution_by_distance, restaurant_distances,
                                  select_category_reps, select_sites)
    from .errors import ConfigError, DataError, NumericalError
    from .workspace import load_fitted, snapshot_path

    cfg = run.cfg
    mode = mode or cfg.get("counterfactual", "mode")
    modes = ("redistribution", "alternatives", "best-location", "best-category", "self-check")
    if mode not in modes:
        raise ConfigError(f"[counterfactual] mode must be one of {', '.join(modes)}")
    ds = _dataset(run)
    fit_dir = cfg.get("paths", "fit")
    kind = cfg.get("counterfactual", "model")
    run.used(snapshot_path(fit_dir, kind))
    model, params, _ = load_fitted(fit_dir, kind, ds, cfg.prior())
    p = ds.panel
    recs = ds.records
    pc = cfg.pipeline_config()
    sessions = _sessions(cfg, ds)

    def events():
        path = cfg.get("paths", "events") or ds.paths.get("events")
        if not path:
            raise ConfigError("[paths] events is required for this mode")
        run.used(path)
        return io.read_events(path)

    if mode == "redistribution":
        edges = cfg.bands()
        labels = band_labels(edges)
        rows, kept, observed = [], [], []
        for ev in events():
            try:
                cohort = build_cohort(p, ev, pc.sample_start,
                                      cfg.float("counterfactual", "radius_miles"),
                                      cfg.int("counterfactual", "min_consideration"))
                target = cohort.target
                row = redistribution_by_distance(model, params, p, cohort,
                                                 restaurant_distances(recs, target), edges)
            except DataError as exc:
                logger.warning("skipping event %s: %s", ev.event_id, exc)
                continue
            kept.append(row)
            try:
                act = actual_redistribution(p, cohort, restaurant_distances(recs, target), edges)
                observed.append(act)
                act_vals = [float(act.target_share)] + [float(x) for x in act.band_shares]
            except DataError as exc:
                logger.warning("no actual deltas for event %s: %s", ev.event_id, exc)
                act_vals = [None] * (len(labels) + 1)
            rows.append([row.event_id, len(cohort.users), len(cohort.eligible_restaurants),
                         float(row.target_share)] + [float(x) for x in row.band_shares]
                        + act_vals)
        io.write_csv(run.path("redistribution_events.csv"),
                     ["event_id", "n_users", "n_eligible_restaurants", "target_share"] + labels
                     + ["actual_target_share"] + [f"actual_{lab}" for lab in labels],
                     sorted(rows))

        def summary(rs):
            if not rs:
                return [(None, None, 0)] * len(labels)
            mean, se = event_summary(rs)
            return [(float(m), None if np.isnan(s) else float(s), len(rs))
                    for m, s in zip(mean, se)]

        out = [(lab,) + pred + act
               for lab, pred, act in zip(labels, summary(kept), summary(observed))] if kept else []
        io.write_csv(run.path("redistribution_summary.csv"),
                     ("band", "mean", "se", "n_events", "actual_mean", "actual_se",
                      "actual_n_events"), out)
    elif mode == "alternatives":
        cats = [r.categories for r in recs]
        rix = {r: k for k, r in enumerate(p.restaurant_ids)}
        rows = []
        for n, ev in enumerate(sorted(events(), key=lambda e: e.event_id)):
            if ev.restaurant_id not in rix:
                logger.warning("skipping event %s: target not in panel", ev.event_id)
                continue
            res = alternative_comparison(model, params, p, rix[ev.restaurant_id], cats,
                                         _rng(cfg, "alternatives", n),
                                         cfg.int("counterfactual", "n_alternatives"), sessions)
            rows.append(dict(event_id=ev.event_id, **res))
        io.write_table(run.path("alternatives.csv"), rows,
                       ("event_id", "restaurant_id", "target_demand", "same_category_mean",
                        "different_category_mean", "n_same", "n_different"))
    elif mode in ("best-location", "best-category"):
        demand = all_demands(model, params, p, sessions)
        reps = select_category_reps(demand, [r.major_category for r in recs],
                                    _rng(cfg, "reps"), cfg.float("counterfactual", "rep_band_sd"))
        sites = select_sites(recs, _rng(cfg, "sites"))
        grid = best_location_map(model, params, p, reps, sites, sessions)
        io.write_csv(run.path("category_reps.csv"), ("category", "restaurant_id"),
                     sorted((c, p.restaurant_ids[k]) for c, k in reps.items()))
        io.write_table(run.path("demand_grid.csv"), grid, ("geohash6", "category", "demand"))
        if mode == "best-category":
            groups = cfg.category_groups() or {"all": tuple(sorted(reps))}
            io.write_table(run.path("best_category.csv"), best_category_map(grid, groups),
                           ("geohash6", "group", "category", "demand"))
    else:
        rows, worst = [], 0.0
        for k in range(p.n_restaurants):
            a = predicted_demand(model, params, p, k, sessions)
            b = counterfactual_demand(model, params, p, k, k, sessions)
            err = abs(a - b) / max(abs(a), 1e-300)
            worst = max(worst, err)
            rows.append((p.restaurant_ids[k], float(a), float(b), float(err)))
        io.write_csv(run.path("self_check.csv"),
                     ("restaurant_id", "predicted_demand", "self_replacement_demand",
                      "relative_error"), rows)
        if worst > 1e-12:
            raise NumericalError(f"self-replacement identity violated (relative error {worst:.3g})")


# ------------------------------------------------------------------ similar

def cmd_similar(run, restaurant_id=None, n=None, space=None):
    from . import io
    from .counterfactuals import similar_restaurants
    from .errors import ConfigError, DataError
    from .workspace import load_fitted, snapshot_path

    cfg = run.cfg
    ds = _dataset(run)
    rid = restaurant_id or cfg.get("similar", "restaurant_id")
    n = n if n is not None else cfg.int("similar", "n")
    space = space or cfg.get("similar", "space")
    if space not in ("latent", "utility"):
        raise ConfigError("[similar] space must be latent or utility")
    if not rid:
        raise ConfigError("[similar] restaurant_id is required")
    p = ds.panel
    if rid not in p.restaurant_ids:
        raise DataError(f"restaurant {rid} is not in the dataset")
    kind = cfg.get("similar", "model")
    fit_dir = cfg.get("paths", "fit")
    run.used(snapshot_path(fit_dir, kind))
    model, params, _ = load_fitted(fit_dir, kind, ds, cfg.prior())
    kw = {}
    if space == "utility":
        missing = [u for u in p.user_ids if u not in ds.morning]
        if missing:
            raise DataError(f"utility space needs morning.csv entries; {missing[0]} missing")
        kw = dict(panel=p, user_points=[tuple(ds.morning[u].point) for u in p.user_ids],
                  coords=[(r.lat, r.lon) for r in ds.records])
    res = similar_restaurants(model, params, p.restaurant_ids.index(rid), n, space, **kw)
    io.write_csv(run.path(f"similar_{rid}_{space}.csv"), ("rank", "restaurant_id", "distance"),
                 ((k + 1, p.restaurant_ids[i], d) for k, (i, d) in enumerate(res)))


# -------------------------------------------------------------------- main

def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="INI config file")
    parser.add_argument("--seed", type=int, default=d, help="root random seed")
    parser.add_argument("--out", default=d, help="output directory")
    parser.add_argument("--threads", type=int, default=d, help="BLAS/OpenMP thread cap")
    parser.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress
                        else 0)


def build_parser():
    parser = argparse.ArgumentParser(prog="ttfm", description=__doc__.splitlines()[0])
    _global_flags(parser, False)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {c: sub.add_parser(c) for c in COMMANDS}
    for sp in subs.values():
        _global_flags(sp, True)
    subs["fit"].add_argument("--model", choices=("ttfm", "mnl", "both"))
    subs["counterfactual"].add_argument(
        "--mode", choices=("redistribution", "alternatives", "best-location", "best-category",
                           "self-check"))
    subs["similar"].add_argument("--restaurant-id")
    subs["similar"].add_argument("-n", type=int)
    subs["similar"].add_argument("--space", choices=("latent", "utility"))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("ttfm: error: --threads must be positive", file=sys.stderr)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    from .config import RunConfig
    from .errors import TTFMError

    try:
        if args.seed is not None and args.seed < 0:
            from .errors import ConfigError
            raise ConfigError("--seed must be non-negative")
        cfg = RunConfig.load(args.config, args.seed)
        run = Run(args.command, cfg, args.out or os.path.join("out", args.command))
        if args.config:
            run.used(args.config)
        if args.command == "synth":
            cmd_synth(run)
        elif args.command == "ingest":
            cmd_ingest(run)
        elif args.command == "fit":
            cmd_fit(run, args.model)
        elif args.command == "report":
            cmd_report(run)
        elif args.command == "counterfactual":
            cmd_counterfactual(run, args.mode)
        else:
            cmd_similar(run, args.restaurant_id, args.n, args.space)
        run.write_manifest()
    except TTFMError as exc:
        print(f"ttfm {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
