from django import forms
from django.core.exceptions import ValidationError

from utils.config import get_setting

from .driver import RunConfig
from .exponents import theta_threshold


def _open_unit(value, label):
    if value is not None and not 0.0 < value < 1.0:
        raise ValidationError(f"{label} must lie in (0, 1).")
    return value


class RunConfigForm(forms.Form):
    """Validates the JSON configuration of a global run."""

    n = forms.IntegerField(min_value=2, max_value=4)
    resolution = forms.IntegerField(min_value=8)
    theta = forms.FloatField()
    theta0 = forms.FloatField(required=False)
    alpha0 = forms.FloatField(min_value=0.0)
    beta0 = forms.FloatField()
    A0 = forms.FloatField(min_value=1.0)
    iterations = forms.IntegerField(min_value=1)
    output_dir = forms.CharField(required=False, max_length=500)
    epsilon = forms.FloatField(required=False)
    frequency_scale = forms.FloatField(required=False)
    top_frequency = forms.FloatField(required=False)
    seed = forms.IntegerField(required=False)
    dump = forms.BooleanField(required=False)
    accuracy = forms.TypedChoiceField(
        required=False, choices=[(a, a) for a in (2, 4, 6, 8)], coerce=int, empty_value=None
    )

    def clean_theta(self):
        return _open_unit(self.cleaned_data.get('theta'), "θ")

    def clean_beta0(self):
        return _open_unit(self.cleaned_data.get('beta0'), "β₀")

    def clean_epsilon(self):
        return _open_unit(self.cleaned_data.get('epsilon'), "ε")

    def clean_resolution(self):
        resolution = self.cleaned_data.get('resolution')
        if resolution is not None and resolution % 2:
            raise ValidationError("Resolution must be even.")
        return resolution

    def clean_top_frequency(self):
        top = self.cleaned_data.get('top_frequency')
        if top is not None and top <= 1.0:
            raise ValidationError("Top frequency must exceed 1.")
        return top

    def clean_frequency_scale(self):
        scale = self.cleaned_data.get('frequency_scale')
        if scale is not None and scale <= 0.0:
            raise ValidationError("Frequency scale must be positive.")
        return scale

    def clean(self):
        cleaned = super().clean()
        unknown = sorted(set(self.data) - set(self.fields))
        if unknown:
            raise ValidationError(f"unknown run configuration keys: {', '.join(unknown)}")

        resolution, top = cleaned.get('resolution'), cleaned.get('top_frequency')
        factor = get_setting("RESOLUTION_FACTOR", 8)
        if resolution is not None and top is not None and top * factor > resolution:
            self.add_error('top_frequency', ValidationError(f"Top frequency must not exceed resolution/{factor:g}."))

        n, theta, theta0 = cleaned.get('n'), cleaned.get('theta'), cleaned.get('theta0')
        if n is None or theta is None:
            return cleaned
        threshold = float(theta_threshold(n))
        if theta >= threshold:
            self.add_error('theta', ValidationError(f"beyond threshold exponent 1/{round(1 / threshold)}"))
        elif theta0 is not None and not theta < theta0 < threshold:
            self.add_error('theta0', ValidationError("θ₀ must lie between θ and the threshold exponent."))
        return cleaned

    def to_config(self):
        """The RunConfig for the cleaned data; call after is_valid()."""
        return RunConfig.from_dict({k: v for k, v in self.cleaned_data.items() if v not in (None, "")})
