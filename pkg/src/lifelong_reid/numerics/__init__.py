"""Dense linear algebra and gradient evaluation."""
from .autodiff import Tensor, grad_eval
from .gradcheck import check_gradients
from .linalg import sqrtm_psd, sym_eig, trace_sqrt_psd

__all__ = ["Tensor", "grad_eval", "check_gradients", "sqrtm_psd", "sym_eig", "trace_sqrt_psd"]
