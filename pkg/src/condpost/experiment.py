"""Multi-seed experiment runs with CSV ledgers and a JSON manifest."""

from __future__ import annotations

import logging
import time
from datetime import datetime, timezone
from pathlib import Path

from .complexity import complexity_report, dc_bound_linear, class_dimension, dc_inequality_check
from .errors import EmptyCoverSet, EtaTooLarge
from .harness import (
    AgentType,
    RunResult,
    resolve_agent,
    run_algorithm1,
    run_baseline,
    summarize,
    theorem_bound,
    tuned_theorem_bound,
)
from .serialization import ExperimentConfig, dumps
from .value_class import check_assumptions, kappa

log = logging.getLogger(__name__)


def csv_name(seed: int) -> str:
    return f"regret_{seed}.csv"


def run_config(config: ExperimentConfig) -> list[RunResult]:
    mdp, fclass = config.mdp, config.fclass
    if config.agent.type is AgentType.RANDOM:
        return [run_baseline(config.agent, mdp, fclass, config.T, s, config.config_hash)
                for s in config.seeds]
    agent = resolve_agent(config.agent, mdp, fclass, config.T)
    log.info("agent %s: eta=%r lambda=%r (%s)", agent.type.value, agent.eta, agent.lam, agent.lam_source)
    out = []
    for s in config.seeds:
        t0 = time.perf_counter()
        out.append(run_algorithm1(agent, mdp, fclass, config.T, s, config.config_hash))
        log.info("seed %d: cumulative regret %.4f (%.1fs)", s, out[-1].ledger.total,
                 time.perf_counter() - t0)
    return out


def _bound_section(config: ExperimentConfig, results: list[RunResult]) -> dict:
    mdp, fclass, T = config.mdp, config.fclass, config.T
    section: dict = {}
    try:
        section["tuned"] = tuned_theorem_bound(mdp, fclass, T, beta=config.agent.beta)
    except (EmptyCoverSet, EtaTooLarge) as exc:
        section["tuned"] = {"error": str(exc)}
    agent = results[0].agent
    if agent.lam > 0:
        try:
            b = fclass.bound_b
            k = kappa(fclass, b / T**agent.beta, mdp)
            dc = dc_bound_linear(class_dimension(fclass), mdp.horizon, T)
            section["agent"] = {
                "eta": agent.eta, "lambda": agent.lam, "kappa": k, "dc": dc,
                "bound": theorem_bound(k, dc, b, T, agent.eta, agent.lam, mdp.horizon, agent.beta),
            }
        except (EmptyCoverSet, EtaTooLarge) as exc:
            section["agent"] = {"error": str(exc)}
    return section


def run_experiment(config: ExperimentConfig, out_dir: str | Path) -> dict:
    """Run every seed, write regret_<seed>.csv files and manifest.json into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    results = run_config(config)
    files = {}
    for r in results:
        name = csv_name(r.ledger.seed)
        (out_dir / name).write_text(r.ledger.to_csv())
        files[str(r.ledger.seed)] = name

    mdp, fclass = config.mdp, config.fclass
    K = dc_bound_linear(class_dimension(fclass), mdp.horizon, config.T)
    dc_summary = {}
    for r in results:
        if r.record is not None:
            dc_summary[str(r.ledger.seed)] = [
                dc_inequality_check(r.record, mu, K).to_dict() for mu in config.complexity.mu_list
            ]
    report = None
    try:
        first = next((r.record for r in results if r.record is not None), None)
        report = complexity_report(
            mdp, fclass, config.epsilon(), config.complexity.mu_list, config.T,
            config.complexity.be_mode, record=first,
        )
    except (EmptyCoverSet, ValueError, RuntimeError) as exc:
        log.warning("complexity report unavailable: %s", exc)
        report = {"error": str(exc)}

    assumptions = check_assumptions(mdp, fclass, 1e-9)
    totals = [r.ledger.total for r in results]
    summary = summarize(totals)
    agent = results[0].agent
    manifest = {
        "config": config.echo,
        "input_hash": config.input_hash,
        "config_hash": config.config_hash,
        "seeds": list(config.seeds),
        "files": files,
        "agent": {"type": agent.type.value, "eta": agent.eta, "lambda": agent.lam,
                  "alpha": agent.alpha, "beta": agent.beta, "lambda_source": agent.lam_source},
        "assumptions": {"realizable": assumptions.realizable, "bounded": assumptions.bounded,
                        "complete": assumptions.complete},
        "cumulative_regret": {"per_seed": dict(zip(files, totals)), "median": summary.median,
                              "q25": summary.q25, "q75": summary.q75},
        "kappa": report.get("kappa") if report else None,
        "dc_checks": dc_summary,
        "complexity": report,
        "theorem_bound": _bound_section(config, results),
        "started_at": started.isoformat(),
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "wall_clock_seconds": time.perf_counter() - t0,
    }
    (out_dir / "manifest.json").write_text(dumps(manifest))
    return manifest
