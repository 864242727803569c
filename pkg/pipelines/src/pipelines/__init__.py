"""Model-backed caption concreteness scorers.

Reconstruction pipelines (semantic and visual bottleneck), the distilled
student regressor, and a server speaking the scorer line protocol. This
package talks to the curation core only through files and that protocol.
"""

from .distill import DistillConfig, DistillResult, StudentScorer, distill_train, load_distillation_set
from .encoders import HashedTrigramEncoder, load_module, save_module, state_hash
from .lm import PrefixLM, beam_search, pretrain_lm_with_prefixes, reconstruction_loss
from .sba import PrefixProjection, SbaConfig, SbaModel, SbaTrainResult, sba_train
from .standardizer import Standardizer
from .textproc import best_of, edit_distance, edit_similarity, similarity_provider
from .vba import ImageCaptioner, TextToImage, VbaConfig, VbaPipeline, vba_reconstruct

__version__ = "0.1.0"
