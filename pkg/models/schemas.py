"""
Modèles pydantic des configurations d'expérience.

Un document YAML (config/*.yaml) est validé en ExperimentConfig ou
CompareConfig; les valeurs par défaut reprennent les hyperparamètres de
référence (Adam 1e-3, minibatch 64, 4 derniers pas, N(0, 0.1)).
"""
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_DENSITIES = [0.8, 0.6, 0.4, 0.2, 0.1, 0.05, 0.02, 0.01]


class StrictModel(BaseModel):
    """Base commune: champs inconnus refusés (fautes de frappe dans le YAML)."""
    model_config = ConfigDict(extra="forbid")


class CellConfig(StrictModel):
    """Architecture de la couche récurrente."""
    arch: Literal["RNN", "LSTM", "PeepholeLSTM", "GRU"] = "GRU"
    input_dim: int = Field(28, ge=1)
    hidden_dim: int = Field(100, ge=1)
    activation: Literal["tanh", "identity"] = "tanh"
    readout_mode: Literal["last", "all"] = "last"

    @model_validator(mode="after")
    def _identity_rnn_only(self):
        if self.activation == "identity" and self.arch != "RNN":
            raise ValueError("activation identity réservée à l'architecture RNN")
        return self


class InitConfig(StrictModel):
    """Schéma d'initialisation; std est un écart-type."""
    scheme: Literal["normal", "glorot", "uniform", "standard_normal"] = "normal"
    mean: float = 0.0
    std: float = Field(0.1, gt=0)


class ApproxDistribution(StrictModel):
    """Distribution approchée D̃ servant à estimer γ."""
    kind: Literal["gaussian"] = "gaussian"
    mean: float = 0.0
    std: float = Field(0.1, gt=0)
    seq_len: Optional[int] = Field(None, ge=1)
    input_dim: Optional[int] = Field(None, ge=1)


class CriterionConfig(StrictModel):
    """
    Critère d'élagage.

    sample_count (P) et horizon (U) suivent la procédure d'élagage;
    batch_size (B) est la taille du minibatch de données.
    """
    name: Literal["jacobian", "snip", "foresight", "random", "magnitude"] = "jacobian"
    sample_count: int = Field(64, ge=1)
    horizon: int = Field(4, ge=1)
    batch_size: int = Field(64, ge=1)
    probe: Literal["frobenius", "ones_vector"] = "frobenius"
    normalize_by_gamma: Optional[bool] = None
    exempt_bias: bool = False
    foresight_absolute: bool = False
    approx: ApproxDistribution = Field(default_factory=ApproxDistribution)

    @property
    def normalizes(self) -> bool:
        """Division par |γ|: explicite, sinon active pour le seul critère jacobian."""
        if self.normalize_by_gamma is None:
            return self.name == "jacobian"
        return self.normalize_by_gamma


class L2Schedule(StrictModel):
    """Élagage itératif par magnitude: densités successives tous les `interval` pas."""
    densities: List[float] = Field(default_factory=lambda: list(DEFAULT_DENSITIES))
    interval: int = Field(10000, ge=1)

    @field_validator("densities")
    @classmethod
    def _strictly_decreasing(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("au moins une densité")
        if any(not 0 < d <= 1 for d in v):
            raise ValueError("densités dans ]0, 1]")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("densités strictement décroissantes")
        return v


class TrainConfig(StrictModel):
    """Entraînement masqué (Adam, entropie croisée au dernier pas)."""
    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(1, ge=0)
    max_steps: Optional[int] = Field(None, ge=0)
    eval_every: int = Field(500, ge=1)
    eval_limit: Optional[int] = Field(None, ge=1)
    checkpoint_every: Optional[int] = Field(None, ge=1)
    clip_norm: Optional[float] = Field(None, gt=0)
    track_chi: bool = False
    l2_schedule: Optional[L2Schedule] = None


class SyntheticSpec(StrictModel):
    """Tâche synthétique (CI): classe au dernier pas ou copie mémoire."""
    kind: Literal["last_step_class", "copy_memory"] = "last_step_class"
    count: int = Field(1024, ge=1)
    seq_len: int = Field(8, ge=1)
    input_dim: int = Field(4, ge=1)
    num_classes: int = Field(2, ge=2)
    noise: float = Field(0.3, ge=0)
    memory_len: int = Field(3, ge=1)
    validation_fraction: float = Field(0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _copy_fits(self):
        if self.kind == "copy_memory" and self.seq_len < 2 * self.memory_len + 1:
            raise ValueError("copy_memory exige seq_len >= 2 * memory_len + 1")
        return self


class DatasetSpec(StrictModel):
    """Jeu de données; root est remplacé par RNNPRUNE_DATA_ROOT si défini."""
    kind: Literal["mnist", "synthetic"] = "mnist"
    root: Optional[str] = None
    validation_size: int = Field(10000, ge=1)
    train_limit: Optional[int] = Field(None, ge=1)
    validation_limit: Optional[int] = Field(None, ge=1)
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)

    @property
    def seq_len(self) -> int:
        return 28 if self.kind == "mnist" else self.synthetic.seq_len

    @property
    def input_dim(self) -> int:
        if self.kind == "mnist":
            return 28
        if self.synthetic.kind == "copy_memory":
            # symboles one-hot + canal délimiteur
            return self.synthetic.num_classes + 1
        return self.synthetic.input_dim


class ExperimentConfig(StrictModel):
    """
    Configuration complète d'une expérience (élagage + entraînement).

    sparsity est la fraction élaguée; `keep` fixe directement K si renseigné.
    """
    name: str = "experiment"
    seed: int = Field(0, ge=0)
    cell: CellConfig = Field(default_factory=CellConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    criterion: CriterionConfig = Field(default_factory=CriterionConfig)
    sparsity: float = Field(0.95, ge=0, le=1)
    keep: Optional[int] = Field(None, ge=0)
    train: TrainConfig = Field(default_factory=TrainConfig)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    out_dir: str = "runs"

    @model_validator(mode="after")
    def _consistent_dims(self):
        if self.cell.input_dim != self.dataset.input_dim:
            raise ValueError(
                f"cell.input_dim={self.cell.input_dim} incompatible avec le jeu "
                f"{self.dataset.kind} (D={self.dataset.input_dim})"
            )
        if self.criterion.horizon > self.dataset.seq_len - 1:
            raise ValueError(
                f"criterion.horizon={self.criterion.horizon} doit être <= S-1={self.dataset.seq_len - 1}"
            )
        if self.dataset.kind == "synthetic" and self.dataset.synthetic.kind == "copy_memory" \
                and self.cell.readout_mode != "all":
            raise ValueError("la tâche copy_memory exige cell.readout_mode=all")
        return self


class CompareCell(StrictModel):
    """Une case du tableau de comparaison: critère, graine et surcharges pointées."""
    label: Optional[str] = None
    criterion: str
    seed: int = Field(ge=0)
    overrides: Dict[str, Any] = Field(default_factory=dict)

    @property
    def key(self) -> str:
        return self.label or self.criterion


class CompareConfig(StrictModel):
    """
    Matrice de comparaison.

    Les cases explicites (`cells`) s'ajoutent au produit criteria × seeds.
    """
    base: ExperimentConfig = Field(default_factory=ExperimentConfig)
    criteria: List[str] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=lambda: [0])
    cells: List[CompareCell] = Field(default_factory=list)
    workers: int = Field(1, ge=1)

    def expand(self) -> List[CompareCell]:
        grid = [CompareCell(criterion=c, seed=s) for c in self.criteria for s in self.seeds]
        return grid + list(self.cells)


class TrainMetrics(StrictModel):
    """Une ligne du CSV de métriques."""
    step: int = Field(ge=0)
    train_loss: Optional[float] = None
    val_error: Optional[float] = Field(None, ge=0, le=100)
    perplexity: Optional[float] = None
    wall_ms: float = Field(0.0, ge=0)
    density: float = Field(1.0, ge=0, le=1)
    retained: int = Field(0, ge=0)
    chi: Optional[float] = None
    config_hash: str = ""
    seed: Optional[int] = None
