"""Train small autoregressive language models on strings sampled from
probabilistic context-free grammars and measure what they memorize:
recollection against a loss threshold, counterfactual against a paired
run without the string, and contextual against the best loss any run
reaches without it."""

from .errors import ConfigError, RunError
from .grammar import (
    ProbabilisticGrammar,
    ProductionRule,
    SampledString,
    StringDataset,
    asset_names,
    dataset_from_strings,
    derivation_count,
    entropy_exact,
    entropy_monte_carlo,
    enumerate_language,
    grammar_from_rules,
    grammar_text,
    load_grammar,
    parse_grammar,
    sample_dataset,
    sample_string,
    string_logprob,
)
from .model import (
    ModelConfig,
    ModelParameters,
    Vocabulary,
    batch_eval,
    batch_losses,
    forward,
    init_params,
    load_params,
    loss_gradient,
    save_params,
    sequence_accuracy,
    sequence_loss,
)
from .training import (
    LossCurve,
    TrainConfig,
    TrainRun,
    derive_seed,
    optimal_contextual_loss,
    optimal_learning_epoch,
    train,
)
from .measures import (
    CONTEXTUAL,
    COUNTERFACTUAL,
    DatasetMemorization,
    Lemma1Report,
    MeasureKind,
    MemorizationRecord,
    PairedLossCurves,
    contextual_measure,
    counterfactual_measure,
    dataset_memorization,
    expected_measure,
    lemma1_check,
    proxy_pair,
    recollection_kind,
    recollection_measure,
    reference_upper_bound,
)
from .harness import (
    ExperimentConfig,
    child_seed,
    run_language_study,
    run_paired_probe_study,
    run_size_sweep,
)
from .reports import RunArtifacts, artifacts_from_dir, emit_reports

__version__ = "0.1.0"
