from .experiment import (Aggregate, RegretRecord, RunConfig, RunResult, aggregate, baseline_sweep, reference,
                         run_experiment, run_seed)
from .report import emit_outputs
