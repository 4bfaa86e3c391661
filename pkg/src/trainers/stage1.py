"""
Stage 1 Trainer
Trains the content encoder and the dual-encoder Conformer-VAE jointly on paired
whisper/normal speech.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import torch
from tqdm import tqdm

from src.alignment.softdtw import SoftDTWLoss
from src.collectors.manifest import UtteranceRecord, pairs
from src.collectors.utterance_store import UtteranceStore
from src.models.conformer_vae import ConformerVAE, stage1_batch_loss
from src.models.content_encoder import ContentEncoder
from src.trainers.common import (
    BatchSampler,
    TrainingResult,
    clipped_step,
    log_progress,
    make_optimizer,
    pad_batch,
    seed_everything,
)
from src.utils.config_manager import RunConfig
from src.utils.data_manager import DataManager
from src.utils.errors import PairingError

logger = logging.getLogger(__name__)

STAGE = "stage1"


def build_stage1(run: RunConfig) -> Tuple[ContentEncoder, ConformerVAE]:
    return ContentEncoder(run.encoder), ConformerVAE(run.vae)


def load_stage1(run: RunConfig, data: DataManager) -> Tuple[ContentEncoder, ConformerVAE]:
    """Encoder and VAE restored from the Stage-1 checkpoint, in eval mode with frozen parameters."""
    payload = data.load_checkpoint(STAGE)
    encoder, vae = build_stage1(run)
    data.restore(payload, {"encoder": encoder, "vae": vae})
    for module in (encoder, vae):
        module.eval()
        module.requires_grad_(False)
    return encoder, vae


def train_stage1(
    run: RunConfig,
    records: Sequence[UtteranceRecord],
    data: DataManager,
    store: Optional[UtteranceStore] = None,
    show_progress: bool = False,
) -> TrainingResult:
    """
    Fit encoder + VAE on whisper/normal pairs.

    Args:
        run: typed run configuration
        records: paired manifest records (both styles of every pair_id)
        data: checkpoint/history persistence
        store: optional feature cache shared with other stages

    Returns:
        TrainingResult with the checkpoint path and per-step loss breakdowns
    """
    pair_list = pairs(records)
    if not pair_list:
        raise PairingError("stage 1 needs at least one whisper/normal pair")
    opt_cfg = run.optimizer(STAGE)
    store = store or UtteranceStore(records, run.spec16, run.spec22)

    seed_everything(run.seed)
    encoder, vae = build_stage1(run)
    encoder.train()
    vae.train()

    mels_w: List[torch.Tensor] = []
    mels_n: List[torch.Tensor] = []
    for whisper, normal in pair_list:
        mels_w.append(torch.as_tensor(store.mel16(whisper).frames, dtype=torch.float32))
        mels_n.append(torch.as_tensor(store.mel16(normal).frames, dtype=torch.float32))
    logger.info("stage 1: %d pairs, %d steps, batch %d", len(pair_list), opt_cfg.steps, opt_cfg.batch_size)

    optimizer = make_optimizer([encoder, vae], opt_cfg)
    sampler = BatchSampler(len(pair_list), opt_cfg.batch_size, run.seed)
    generator = torch.Generator().manual_seed(run.seed)
    dtw = SoftDTWLoss(run.softdtw)

    history = []
    for step in tqdm(range(1, opt_cfg.steps + 1), desc="stage 1", disable=not show_progress):
        idx = sampler.next_batch()
        x_w, len_w = pad_batch([mels_w[i] for i in idx])
        x_n, len_n = pad_batch([mels_n[i] for i in idx])
        c_w, enc_w = encoder(x_w, len_w)
        c_n, enc_n = encoder(x_n, len_n)
        total, breakdown = stage1_batch_loss(vae, c_w, enc_w, c_n, enc_n, run.vae_weights, dtw, generator)
        clipped_step(optimizer, total, opt_cfg.grad_clip)
        losses = {"step": step, **breakdown.as_dict()}
        history.append(losses)
        if step % opt_cfg.log_interval == 0 or step == opt_cfg.steps:
            log_progress(STAGE, step, opt_cfg.steps, losses)

    checkpoint = data.save_checkpoint(
        STAGE, {"encoder": encoder, "vae": vae}, run.tree, step=opt_cfg.steps, optimizers={"adam": optimizer}
    )
    history_path = data.save_history(history, data.history_path(STAGE), STAGE)
    return TrainingResult(STAGE, checkpoint, history, history_path)
