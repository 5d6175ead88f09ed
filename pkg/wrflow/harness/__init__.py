"""Config files, diagnostics and the command-line interface."""

from wrflow.harness.config_file import (
    apply_overrides,
    dump_run_config,
    load_run_config,
    parse_run_config,
    run_config_dict,
)
from wrflow.harness.diagnostics import (
    ConflictReport,
    GradcheckReport,
    KvAblationReport,
    ablate_kv,
    conflict_report,
    diagnose_conflict,
    gradcheck_report,
    profile_gradients,
    sweep_region_strength,
)

__all__ = [
    "apply_overrides",
    "dump_run_config",
    "load_run_config",
    "parse_run_config",
    "run_config_dict",
    "ConflictReport",
    "GradcheckReport",
    "KvAblationReport",
    "ablate_kv",
    "conflict_report",
    "diagnose_conflict",
    "gradcheck_report",
    "profile_gradients",
    "sweep_region_strength",
]
