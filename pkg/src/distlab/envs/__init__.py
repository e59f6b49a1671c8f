from .ar import (ArPolicy, RolloutBatch, RolloutSample, SamplerConfig, Scored, ar_logprob,
                 ar_sample, sample_batch, score, score_backward, truncation_mask)
from .synthetic import (Corpus, FeatureEmbedder, align_reward, feature_embed, make_corpus,
                        pref_reward)
from .toy2d import (Gaussian2dPolicy, gaussian_entropy, gaussian_logprob, gaussian_logprob_grad,
                    gaussian_sample, line_dataset)


def policy_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "ar":
        return ArPolicy.from_dict(doc)
    if kind == "gaussian2d":
        return Gaussian2dPolicy.from_dict(doc)
    raise ValueError(f"unknown policy kind {kind!r}")
