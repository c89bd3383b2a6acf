"""Adversarially trained hierarchical paragraph generation over region
features, with a synthetic-scene data pipeline, tape-based autodiff, and
token-level evaluation metrics."""

from .config import (
    CONTINUE, END_ID, PAD_ID, PRESETS, SPECIAL_TOKENS, START_ID, STOP, UNK_ID,
    ConfigError, Dims, TrainConfig, config_from_dict, config_to_dict,
    load_config,
)
from .critics import (
    CriticPair, SentenceCritic, TopicTransitionCritic, score_paragraph,
    score_paragraph_prefix, score_sentence,
)
from .data import (
    Example, SceneSpec, TrainingExample, Vocabulary, encode_example,
    encode_sentence, load_corpus, load_paragraph_corpus, make_dataset,
    normalize, save_corpus, save_paragraph_corpus, synth_example, synth_scene,
    vocab_from_examples,
)
from .generator import (
    GenerationResult, GeneratorParams, GenState, Paragraph, RegionSet,
    generate, language_attention, log_prob, paragraph_step, sample_trace,
    sentence_embedding, sentence_step, teacher_force, visual_attention,
    word_step,
)
from .metrics import bleu, cider, cider_per_image, evaluate_pairs, meteor_exact
from .tensor import (
    NonFiniteError, ShapeMismatchError, Tape, Tensor, backward, check_gradient,
)
from .training import (
    CriticRewardModel, RewardBaseline, RmsProp, TrainingAborted, clip_weights,
    critic_losses, critic_update, generator_step, reconstruction_loss,
    rollout_rewards, train,
)

__version__ = "0.1.0"
