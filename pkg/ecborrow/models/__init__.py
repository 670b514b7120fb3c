from .glm import (
    Family, GlmFit, SingularDesignError, NonconvergenceError, PerfectSeparationError,
    InsufficientRowsError, fit_glm, predict_mean, unit_loss, unit_gradient,
    unit_losses, unit_gradients, avg_hessian,
)
from .kernel_ridge import KernelRidgeFit, DegenerateKernelError, fit_kernel_ridge, predict_kernel_ridge
from .aic import select_covariates_aic
