from ibac.heads.base import (HEAD_REGISTRY, ActionHead, FewShotSplit, HeadEvaluation, MeanActionHead, evaluate_head,
                             fit_mean)
from ibac.heads.direct import DirectProjectionHead, HeadFit, ScratchProjectionHead, fit_direct
from ibac.heads.index import (Codebook, IndexHeadFit, QuantizedIndexHead, build_codebook, evaluate_index_head,
                              fit_index_head)
