import math

import numpy as np
import pytest
from pydantic import TypeAdapter, ValidationError

from src.models.kernel import GaussianGradKernel, KernelSpec, MorseGradKernel, PolynomialTaperKernel, zero_kernel


def test_gaussian_constants():
    kernel = GaussianGradKernel(amplitude=2.0, width=0.5)
    assert kernel.sup_norm == pytest.approx(2.0 * math.exp(-0.5))
    assert kernel.lipschitz == pytest.approx(4.0)
    # |grad phi| peaks at |z| = width
    assert np.linalg.norm(kernel.gradient(np.array([0.5, 0.0]))) == pytest.approx(kernel.sup_norm)


def test_gradient_vanishes_at_origin():
    for kernel in (GaussianGradKernel(), MorseGradKernel(), PolynomialTaperKernel()):
        np.testing.assert_array_equal(kernel.gradient(np.zeros(2)), np.zeros(2))


def test_gaussian_is_attractive():
    kernel = GaussianGradKernel(amplitude=1.0, width=0.25)
    # grad phi(x - y) points from x towards y
    x, y = np.array([0.0, 0.0]), np.array([0.2, 0.0])
    assert kernel.gradient(x - y)[0] > 0


def test_polynomial_taper_support_and_sup():
    kernel = PolynomialTaperKernel(amplitude=1.0, radius=0.5)
    np.testing.assert_array_equal(kernel.gradient(np.array([0.6, 0.0])), [0.0, 0.0])
    peak = 0.5 / math.sqrt(5.0)
    assert np.linalg.norm(kernel.gradient(np.array([peak, 0.0]))) == pytest.approx(kernel.sup_norm)


def test_morse_kernel_passes_its_own_probe():
    kernel = MorseGradKernel(attraction=1.0, attraction_length=0.5, repulsion=2.0, repulsion_length=0.1, core=0.02)
    assert kernel.lipschitz > kernel.sup_norm > 0


def test_invalid_kernels_rejected():
    with pytest.raises(ValidationError):
        GaussianGradKernel(width=0.0)
    with pytest.raises(ValidationError):
        MorseGradKernel(repulsion=-1.0)
    with pytest.raises(ValidationError):
        PolynomialTaperKernel(amplitude=float('inf'))


def test_zero_kernel():
    kernel = zero_kernel()
    assert kernel.is_zero
    assert kernel.sup_norm == 0.0


def test_kernel_spec_parses_by_kind():
    adapter = TypeAdapter(KernelSpec)
    kernel = adapter.validate_python({'kind': 'polynomial_taper', 'amplitude': 0.5, 'radius': 0.3})
    assert isinstance(kernel, PolynomialTaperKernel)
    assert kernel.to_dict() == {'kind': 'polynomial_taper', 'amplitude': 0.5, 'radius': 0.3}
    with pytest.raises(ValidationError):
        adapter.validate_python({'kind': 'coulomb'})
