"""Metrics, experiment sweeps and the analytic curvature probe."""
from .curvature import DirectionalCurvatureProbe, GaussianMixture, curvature_probe, neighbour_fluctuations
from .metrics import MetricReport, asr, auc, metric_report, roc_curve, tpr_at_fpr
from .sweeps import SweepResult, memorization_sweep, reports_for

__all__ = [
    "DirectionalCurvatureProbe", "GaussianMixture", "MetricReport", "SweepResult", "asr", "auc", "curvature_probe",
    "memorization_sweep", "metric_report", "neighbour_fluctuations", "reports_for", "roc_curve", "tpr_at_fpr",
]
