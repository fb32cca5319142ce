import json

from django import forms

from .dynamics import AUTO, DYNAMICS_CHOICES, EXACT_FEEDBACK, LEARNER_CHOICES, NRBR, SAMPLE_FEEDBACK
from .players import EMPIRICAL, EXACT, NOISY_MAX, WEAK

SCHEMA_VERSION = 1

PROBLEM_CHOICES = [
    ('mc', 'Multi-calibration'),
    ('moment', 'Moment multi-calibration'),
    ('agnostic', 'Agnostic multi-calibration'),
    ('conditional', 'Conditional multi-calibration'),
    ('competitive', 'Competitive (objective-wise)'),
]

ORACLE_CHOICES = [
    (EXACT, 'Exact argmax'),
    (EMPIRICAL, 'Empirical argmax over fresh samples'),
    (NOISY_MAX, 'Report-noisy-max over a reused buffer'),
    (WEAK, 'Weak oracle against the reference value'),
]

FIND_CHOICES = [
    ('samples', 'Empirical audit of every iterate'),
    ('oracle', 'One oracle call per iterate'),
    ('best', 'Exact audit of every iterate'),
]

FEEDBACK_CHOICES = [
    (SAMPLE_FEEDBACK, 'Single-sample loss estimates'),
    (EXACT_FEEDBACK, 'Exact expected losses'),
]

# JSON keys that are not valid Python identifiers
FIELD_ALIASES = {'lambda': 'lam'}


class ExperimentConfigForm(forms.Form):
    """Validates one experiment configuration file.

    Keys follow the JSON file; ``lambda`` is read into ``lam``.
    """

    schema_version = forms.IntegerField(required=False, min_value=1, max_value=SCHEMA_VERSION)
    name = forms.CharField(max_length=255, required=False)
    kind = forms.ChoiceField(choices=PROBLEM_CHOICES)
    dynamics = forms.ChoiceField(choices=DYNAMICS_CHOICES)
    distribution = forms.CharField(max_length=500, help_text="Path, relative to the config file or the bundled data")
    groups = forms.JSONField(required=False)
    epsilon = forms.FloatField(min_value=1e-6, max_value=1.0)
    delta = forms.FloatField(min_value=1e-12, max_value=0.999999, required=False)
    lam = forms.FloatField(min_value=1e-6, max_value=1.0)
    k = forms.IntegerField(min_value=2, required=False)
    r = forms.IntegerField(min_value=2, required=False)
    allow_odd = forms.BooleanField(required=False)
    rounds = forms.IntegerField(min_value=1, required=False)
    learner = forms.ChoiceField(choices=LEARNER_CHOICES, required=False)
    feedback = forms.ChoiceField(choices=FEEDBACK_CHOICES, required=False)
    resolution = forms.IntegerField(min_value=1, required=False)
    oracle = forms.ChoiceField(choices=ORACLE_CHOICES, required=False)
    oracle_c = forms.FloatField(min_value=1e-6, max_value=1.0, required=False)
    oracle_samples = forms.IntegerField(min_value=1, required=False)
    sigma = forms.FloatField(min_value=1e-12, required=False)
    buffer_size = forms.IntegerField(min_value=1, required=False)
    find = forms.ChoiceField(choices=FIND_CHOICES, required=False)
    majority_round = forms.BooleanField(required=False)
    reference = forms.FloatField(required=False)
    realizable = forms.BooleanField(required=False)
    brute_force_step = forms.FloatField(min_value=1e-6, max_value=1.0, required=False)
    hypothesis_step = forms.FloatField(min_value=1e-6, max_value=1.0, required=False)
    target = forms.FloatField(min_value=0.0, required=False)

    DEFAULTS = {
        'delta': 0.05,
        'learner': AUTO,
        'feedback': SAMPLE_FEEDBACK,
        'oracle': EXACT,
        'oracle_c': 1.0,
        'find': 'samples',
        'brute_force_step': 0.25,
        'hypothesis_step': 0.25,
    }

    @classmethod
    def from_json(cls, data):
        """Bind a parsed JSON object; returns the form and the unknown keys."""
        bound, unknown = {}, []
        for key, value in data.items():
            name = FIELD_ALIASES.get(key, key)
            if name not in cls.base_fields:
                unknown.append(key)
                continue
            if value is None:
                continue
            bound[name] = json.dumps(value) if name == 'groups' else value
        return cls(bound), unknown

    @staticmethod
    def json_key(name):
        for key, alias in FIELD_ALIASES.items():
            if alias == name:
                return key
        return name

    def clean(self):
        cleaned = super().clean()
        for name, value in self.DEFAULTS.items():
            if cleaned.get(name) in (None, ''):
                cleaned[name] = value
        kind = cleaned.get('kind')
        if kind == 'moment':
            if cleaned.get('r') is None:
                self.add_error('r', "Moment problems need the moment order r.")
            if cleaned.get('k') not in (None, 2):
                self.add_error('k', "Moment problems are binary: k must be 2.")
        groups = cleaned.get('groups')
        if groups is not None and (
            not isinstance(groups, list) or not all(isinstance(g, list) and g for g in groups)
        ):
            self.add_error('groups', "Groups must be a list of nonempty lists of domain points.")
        if cleaned.get('oracle') == WEAK and cleaned.get('reference') is None and not cleaned.get('realizable'):
            self.add_error('reference', "A weak oracle needs a reference value or a realizable instance.")
        if cleaned.get('find') == 'oracle' and cleaned.get('dynamics') != NRBR:
            self.add_error('find', "Find only selects among NRBR iterates.")
        if cleaned.get('majority_round') and (cleaned.get('dynamics') == NRBR or kind == 'competitive'):
            self.add_error('majority_round', "Majority rounding applies to NRNR ensembles of calibration problems.")
        return cleaned

    def first_error(self):
        """(json key, message) of the first validation error."""
        for name, errors in self.errors.items():
            key = None if name == '__all__' else self.json_key(name)
            return key, errors[0]
        return None, None
