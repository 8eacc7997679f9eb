"""convqa: multimodal convolutional question answering over image features.

A from-scratch NumPy library that answers natural-language questions about
images by classifying over a closed answer set.  Questions run through a
three-stage convolution/max-pooling sentence encoder, precomputed image
features pass through a trainable nonlinear map, and a multimodal convolution
layer fuses the two before a softmax classifier.  Training is plain minibatch
SGD with inverted dropout; every backward pass is verifiable against a
finite-difference oracle.
"""

from .data import (
    AnswerVocab,
    SyntheticSpec,
    Triplet,
    Vocab,
    build_vocabs,
    generate_synthetic,
    load_triplets,
    save_triplets,
    shuffle_question_words,
    tokenize,
)
from .errors import (
    ConfigError,
    ConvqaError,
    DuplicateIdError,
    NumericError,
    OutOfTaxonomyError,
    ParseError,
    QuestionTooLongError,
    SequenceTooShortError,
    ShapeError,
    TaxonomyError,
    VocabularyError,
)
from .image import ImageFeatureStore, load_features, save_features
from .metrics import TaxonomyTree, accuracy, load_taxonomy, score_report, wup_similarity, wups_at_t
from .model import (
    ModelConfig,
    ModelParams,
    flatten_params,
    forward_sample,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    predict_sample,
    save_checkpoint,
    unflatten_params,
)
from .numeric import finite_difference_gradient
from .sentence import SentenceEncoderConfig, encode_question_forward, pad_or_reject
from .trainer import (
    GradCheckReport,
    TrainConfig,
    evaluate,
    gradient_check,
    predict_answers,
    sgd_step,
    tiny_config,
    train,
)

__version__ = "0.1.0"
