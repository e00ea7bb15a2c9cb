"""
Run configuration: strict DRF serializers over a frozen dataclass tree
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from rest_framework import serializers

from curation.sampling import DEFAULT_TIER_WEIGHTS, RatioEmaState
from optim.objectives import ClipConfig
from optim.updates import OptimConfig
from policy.engine import RedundancyConfig
from rewards.engine import DiversityConfig, LengthConfig
from taskforge.records import PreferenceAttribute

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Run configuration is malformed or violates an invariant"""

    def __init__(self, message: str, errors: Optional[dict] = None):
        self.errors = errors or {}
        super().__init__(message)


@dataclass(frozen=True)
class SuiteConfig:
    arith_count: int = 200
    modulus: int = 10
    text_only_fraction: float = 0.0
    context_count: int = 0
    leak_fraction: float = 0.0
    ablation_fraction: float = 0.5
    probe_count: int = 8
    probe_train_count: int = 0
    screen_trials: int = 8
    screen_threshold: float = 0.5


@dataclass(frozen=True)
class SamplingConfig:
    n_rollout: int = 8
    groups_per_batch: int = 8
    k: int = 4
    max_len: int = 32
    temperature: float = 1.0
    redundancy_window: int = 8
    redundancy_max_repeats: int = 4

    @property
    def redundancy(self) -> RedundancyConfig:
        return RedundancyConfig(self.redundancy_window, self.redundancy_max_repeats)


@dataclass(frozen=True)
class PolicyConfig:
    hash_width: int = 256
    freeze_prompt_block: bool = False


@dataclass(frozen=True)
class DiversitySettings:
    norm_lo: float = 0.5
    norm_hi: float = 1.0
    tau: float = 0.2

    def build(self) -> DiversityConfig:
        return DiversityConfig(norm_lo=self.norm_lo, norm_hi=self.norm_hi, tau=self.tau)


@dataclass(frozen=True)
class LengthSettings:
    enabled: bool = True
    l_max: int = 512
    l_soft: int = 128
    w_len: float = 0.5

    def build(self) -> Optional[LengthConfig]:
        return LengthConfig(self.l_max, self.l_soft) if self.enabled else None


@dataclass(frozen=True)
class Stage1Config:
    iterations: int = 500
    phase_switch: float = 0.4
    snapshot_interval: int = 1
    epochs_per_batch: int = 1
    patience: int = 0
    tier_resampling: bool = True


@dataclass(frozen=True)
class Stage2Config:
    epochs: int = 20
    batch_size: int = 16
    held_out_fraction: float = 0.2
    styles: Tuple[str, ...] = (PreferenceAttribute.CONCISENESS.value,)


@dataclass(frozen=True)
class EvaluationConfig:
    probe_samples: int = 8
    passk_samples: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    diversity: DiversitySettings = field(default_factory=DiversitySettings)
    length: LengthSettings = field(default_factory=LengthSettings)
    clip: ClipConfig = field(default_factory=ClipConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    ratio_ema: RatioEmaState = field(default_factory=RatioEmaState)
    tier_weights: Tuple[float, float, float] = DEFAULT_TIER_WEIGHTS
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['tier_weights'] = list(self.tier_weights)
        data['stage2']['styles'] = list(self.stage2.styles)
        return data


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects keys it does not declare"""

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown configuration key.'] for key in unknown})
        return super().to_internal_value(data)


class SuiteSerializer(StrictSerializer):
    arith_count = serializers.IntegerField(default=200, min_value=1)
    modulus = serializers.IntegerField(default=10, min_value=2)
    text_only_fraction = serializers.FloatField(default=0.0, min_value=0.0, max_value=1.0)
    context_count = serializers.IntegerField(default=0, min_value=0)
    leak_fraction = serializers.FloatField(default=0.0, min_value=0.0, max_value=1.0)
    ablation_fraction = serializers.FloatField(default=0.5, min_value=0.0, max_value=1.0)
    probe_count = serializers.IntegerField(default=8, min_value=0)
    probe_train_count = serializers.IntegerField(default=0, min_value=0)
    screen_trials = serializers.IntegerField(default=8, min_value=1)
    screen_threshold = serializers.FloatField(default=0.5, min_value=0.0, max_value=1.0)

    def validate(self, attrs):
        if (attrs['probe_count'] or attrs['probe_train_count']) and attrs['modulus'] < 6:
            raise serializers.ValidationError(
                {'modulus': f"Probe tasks need modulus >= 6 to admit three answers, got {attrs['modulus']}."}
            )
        return attrs


class SamplingSerializer(StrictSerializer):
    n_rollout = serializers.IntegerField(default=8, min_value=2)
    groups_per_batch = serializers.IntegerField(default=8, min_value=1)
    k = serializers.IntegerField(default=4, min_value=1)
    max_len = serializers.IntegerField(default=32, min_value=1)
    temperature = serializers.FloatField(default=1.0)
    redundancy_window = serializers.IntegerField(default=8, min_value=1)
    redundancy_max_repeats = serializers.IntegerField(default=4, min_value=2)

    def validate(self, attrs):
        if attrs['k'] > attrs['n_rollout']:
            raise serializers.ValidationError({'k': f"k={attrs['k']} exceeds n_rollout={attrs['n_rollout']}."})
        if attrs['temperature'] <= 0:
            raise serializers.ValidationError({'temperature': 'Temperature must be positive.'})
        return attrs


class PolicySerializer(StrictSerializer):
    hash_width = serializers.IntegerField(default=256, min_value=1)
    freeze_prompt_block = serializers.BooleanField(default=False)


class DiversitySerializer(StrictSerializer):
    norm_lo = serializers.FloatField(default=0.5, min_value=0.0)
    norm_hi = serializers.FloatField(default=1.0, min_value=0.0)
    tau = serializers.FloatField(default=0.2, min_value=0.0)

    def validate(self, attrs):
        if attrs['norm_lo'] > attrs['norm_hi']:
            raise serializers.ValidationError({'norm_lo': 'norm_lo must not exceed norm_hi.'})
        return attrs


class LengthSerializer(StrictSerializer):
    enabled = serializers.BooleanField(default=True)
    l_max = serializers.IntegerField(default=512, min_value=2)
    l_soft = serializers.IntegerField(default=128, min_value=1)
    w_len = serializers.FloatField(default=0.5, min_value=0.0)

    def validate(self, attrs):
        if not 0 < attrs['l_soft'] < attrs['l_max']:
            raise serializers.ValidationError({'l_soft': 'Need 0 < l_soft < l_max.'})
        return attrs


class ClipSerializer(StrictSerializer):
    eps_low = serializers.FloatField(default=0.2)
    eps_high = serializers.FloatField(default=0.28)

    def validate(self, attrs):
        if not 0 < attrs['eps_low'] < 1:
            raise serializers.ValidationError({'eps_low': 'eps_low must lie in (0, 1).'})
        if attrs['eps_high'] <= 0:
            raise serializers.ValidationError({'eps_high': 'eps_high must be positive.'})
        return attrs


class OptimSerializer(StrictSerializer):
    learning_rate = serializers.FloatField(default=0.05)
    momentum = serializers.FloatField(default=0.9, min_value=0.0)
    max_grad_norm = serializers.FloatField(default=5.0)
    beta = serializers.FloatField(default=0.1, min_value=0.0)

    def validate(self, attrs):
        if attrs['learning_rate'] <= 0:
            raise serializers.ValidationError({'learning_rate': 'Learning rate must be positive.'})
        if attrs['momentum'] >= 1:
            raise serializers.ValidationError({'momentum': 'Momentum must be below 1.'})
        if attrs['max_grad_norm'] <= 0:
            raise serializers.ValidationError({'max_grad_norm': 'Gradient-norm cap must be positive.'})
        return attrs


class RatioEmaSerializer(StrictSerializer):
    rho = serializers.FloatField(default=0.5)
    alpha = serializers.FloatField(default=0.1)
    rho_min = serializers.FloatField(default=0.05)
    factor_cap = serializers.IntegerField(default=8, min_value=1)

    def validate(self, attrs):
        if not 0 < attrs['alpha'] <= 1:
            raise serializers.ValidationError({'alpha': 'alpha must lie in (0, 1].'})
        if not 0 < attrs['rho_min'] <= attrs['rho'] <= 1:
            raise serializers.ValidationError({'rho': 'Need 0 < rho_min <= rho <= 1.'})
        return attrs


class Stage1Serializer(StrictSerializer):
    iterations = serializers.IntegerField(default=500, min_value=0)
    phase_switch = serializers.FloatField(default=0.4, min_value=0.0, max_value=1.0)
    snapshot_interval = serializers.IntegerField(default=1, min_value=1)
    epochs_per_batch = serializers.IntegerField(default=1, min_value=1)
    patience = serializers.IntegerField(default=0, min_value=0)
    tier_resampling = serializers.BooleanField(default=True)


_STYLE_CHOICES = [value for value, _ in PreferenceAttribute.choices if value != PreferenceAttribute.ABSTENTION]


class Stage2Serializer(StrictSerializer):
    epochs = serializers.IntegerField(default=20, min_value=0)
    batch_size = serializers.IntegerField(default=16, min_value=1)
    held_out_fraction = serializers.FloatField(default=0.2, min_value=0.0, max_value=0.9)
    styles = serializers.ListField(
        child=serializers.ChoiceField(choices=_STYLE_CHOICES),
        min_length=1,
        default=lambda: [PreferenceAttribute.CONCISENESS.value],
    )


class EvaluationSerializer(StrictSerializer):
    probe_samples = serializers.IntegerField(default=8, min_value=1)
    passk_samples = serializers.IntegerField(default=0, min_value=0)


class RunConfigSerializer(StrictSerializer):
    seed = serializers.IntegerField(default=0, min_value=0)
    suite = SuiteSerializer(default=dict)
    sampling = SamplingSerializer(default=dict)
    policy = PolicySerializer(default=dict)
    diversity = DiversitySerializer(default=dict)
    length = LengthSerializer(default=dict)
    clip = ClipSerializer(default=dict)
    optim = OptimSerializer(default=dict)
    ratio_ema = RatioEmaSerializer(default=dict)
    tier_weights = serializers.ListField(
        child=serializers.FloatField(),
        min_length=3,
        max_length=3,
        default=lambda: list(DEFAULT_TIER_WEIGHTS),
    )
    stage1 = Stage1Serializer(default=dict)
    stage2 = Stage2Serializer(default=dict)
    evaluation = EvaluationSerializer(default=dict)

    def validate_tier_weights(self, value):
        w_mastered, w_partial, w_unmastered = value
        if min(value) <= 0:
            raise serializers.ValidationError('Tier weights must be positive.')
        if w_mastered > min(w_partial, w_unmastered):
            raise serializers.ValidationError('Mastered weight must not exceed the partial/unmastered weights.')
        return value

    def _sub(self, name, serializer_class) -> dict:
        # A missing section arrives as the bare default {}; run it through its serializer for defaults
        data = self.validated_data.get(name) or {}
        nested = serializer_class(data=data)
        nested.is_valid(raise_exception=True)
        return dict(nested.validated_data)

    def create(self, validated_data) -> RunConfig:
        stage2 = self._sub('stage2', Stage2Serializer)
        stage2['styles'] = tuple(stage2['styles'])
        return RunConfig(
            seed=validated_data.get('seed', 0),
            suite=SuiteConfig(**self._sub('suite', SuiteSerializer)),
            sampling=SamplingConfig(**self._sub('sampling', SamplingSerializer)),
            policy=PolicyConfig(**self._sub('policy', PolicySerializer)),
            diversity=DiversitySettings(**self._sub('diversity', DiversitySerializer)),
            length=LengthSettings(**self._sub('length', LengthSerializer)),
            clip=ClipConfig(**self._sub('clip', ClipSerializer)),
            optim=OptimConfig(**self._sub('optim', OptimSerializer)),
            ratio_ema=RatioEmaState(**self._sub('ratio_ema', RatioEmaSerializer)),
            tier_weights=tuple(validated_data.get('tier_weights', DEFAULT_TIER_WEIGHTS)),
            stage1=Stage1Config(**self._sub('stage1', Stage1Serializer)),
            stage2=Stage2Config(**stage2),
            evaluation=EvaluationConfig(**self._sub('evaluation', EvaluationSerializer)),
        )


def parse_run_config(data: Optional[Mapping] = None, seed: Optional[int] = None) -> RunConfig:
    """
    Validate a configuration document

    Args:
        data: Parsed JSON document (None for all defaults)
        seed: Overrides the document's seed when given

    Raises:
        ConfigurationError: unknown keys, wrong types or violated invariants
    """
    data = dict(data or {})
    if seed is not None:
        data['seed'] = seed
    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigurationError(f"Invalid run configuration: {json.dumps(serializer.errors)}", serializer.errors)
    try:
        return serializer.save()
    except (ValueError, serializers.ValidationError) as e:
        raise ConfigurationError(f"Invalid run configuration: {e}") from e


def load_run_config(path=None, seed: Optional[int] = None) -> RunConfig:
    if path is None:
        return parse_run_config(None, seed)
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except OSError as e:
        raise ConfigurationError(f"Cannot read configuration {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Configuration {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration {path} must hold a JSON object")
    config = parse_run_config(data, seed)
    logger.info(f"Loaded run configuration from {path} (seed {config.seed})")
    return config
