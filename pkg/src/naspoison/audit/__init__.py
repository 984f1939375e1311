from .manifest import DEFAULTS, load_dataset, load_manifest, manifest_hash, resolve, trial_seeds
from .report import render_report
from .runner import AuditRunner, Ledger, RunLedger, TrialRecord, condition_tag, reconcile_dimension

__all__ = [
    "DEFAULTS", "load_dataset", "load_manifest", "manifest_hash", "resolve", "trial_seeds", "render_report",
    "AuditRunner", "Ledger", "RunLedger", "TrialRecord", "condition_tag", "reconcile_dimension",
]
