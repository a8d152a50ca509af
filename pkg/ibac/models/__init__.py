from ibac.models.base import MODEL_REGISTRY, LatentActionModel, LossBreakdown, build_model
from ibac.models.idm import IdmModel, idm_loss
from ibac.models.posterior import GaussianPosterior, kl_standard_normal, reparameterize
from ibac.models.vib import VibModel, vib_loss
