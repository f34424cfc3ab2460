from .lsq import FitError, FitResult, check_jacobian, levenberg_marquardt, linear_lstsq
from .models import (
    DEFAULT_KEL_REL_ERROR,
    CapacitanceFit,
    PowerLawModel,
    SinusoidFit,
    capacitance_residuals,
    fit_capacitance,
    fit_parabola,
    fit_power_law,
    fit_sinusoid,
    power_law_residuals,
    sinusoid_residuals,
)
from .scans import (
    DetrendResult,
    DisplacementSensitivity,
    StabilityScan,
    detrend_moving_average,
    displacement_sensitivity,
    stability_scan,
)
