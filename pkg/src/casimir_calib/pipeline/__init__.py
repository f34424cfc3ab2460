from .analysis import (
    AnalysisOptions,
    AnalysisReport,
    Calibration,
    CalibrationPoint,
    analyze_run,
    extract_calibration,
    infer_absolute_distance,
)
from .simulate import FrequencySample, RunDataset, SimulationConfig, config_hash, baseline_config, simulate_run
