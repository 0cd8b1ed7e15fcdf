import numpy as np
import pytest

from ridgediff.errors import DimensionMismatch
from ridgediff.imagecore import GrayImage
from ridgediff.minutiae import MinutiaeTemplate
from ridgediff.validation import check_image, check_images, check_templates


def test_check_image_coerces_arrays():
    img = check_image(np.zeros((4, 4)))
    assert isinstance(img, GrayImage)
    with pytest.raises(DimensionMismatch):
        check_image(np.zeros(4))
    with pytest.raises(DimensionMismatch):
        check_image(np.zeros((4, 3)), square=True)


def test_check_images_stack_and_sizes():
    assert len(check_images(np.zeros((3, 4, 4)))) == 3
    with pytest.raises(ValueError):
        check_images([])
    assert check_images([], min_count=0) == []
    with pytest.raises(DimensionMismatch):
        check_images([np.zeros((4, 4)), np.zeros((5, 5))], same_size=True)


def test_check_templates():
    t = MinutiaeTemplate(8)
    assert check_templates([t, t], 2) == [t, t]
    with pytest.raises(TypeError):
        check_templates([t, 3])
    with pytest.raises(ValueError):
        check_templates([t], 2)
