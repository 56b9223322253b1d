"""Few-shot fine-tuning diagnostics: post-hoc attributions, per-label LMI
statistics, prediction bias, AOPC faithfulness and KL drift across
checkpoints."""

__version__ = "0.1.0"

from .corpus import (Document, LabeledCorpus, Vocabulary, build_vocabulary, encode, label_counts, load_jsonl,
                     subsample, tokenize)
from .explain import (Attribution, attention_explanation, exact_shapley, integrated_gradients, occlusion,
                      random_attribution, sampling_shapley, top_k_features)
from .metrics import (BiasReading, FeaturePool, LmiDistribution, aopc, kld, lmi, lmi_distribution, majority_label,
                      pool_data_features, pool_model_features, prediction_bias)
from .models import (Checkpoint, EvalResult, attention_weights, embedding_gradients, evaluate, init_model,
                     predict_proba, train)
