import logging

import pytest

from gdmadvect.gd import build_gd
from gdmadvect.mesh import generate_refined_nonconforming_mesh, generate_triangular_mesh


@pytest.fixture(autouse=True)
def _quiet_alpha_warning(caplog):
    caplog.set_level(logging.ERROR, logger="gdmadvect.scheme")


def small_gds(n=4, level=2):
    tri = generate_triangular_mesh(n)
    return [build_gd("cvfe", tri), build_gd("mlnc-p1", tri),
            build_gd("hfv", generate_refined_nonconforming_mesh(level))]


@pytest.fixture(params=["cvfe", "mlnc-p1", "hfv"])
def gd(request):
    if request.param == "hfv":
        return build_gd("hfv", generate_refined_nonconforming_mesh(2))
    return build_gd(request.param, generate_triangular_mesh(4))
