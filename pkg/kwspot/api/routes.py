import logging
from datetime import datetime
from typing import Optional

from fastapi import APIRouter, Depends, File, Form, HTTPException, UploadFile, status

from kwspot import dependencies
from kwspot.config import settings
from kwspot.decoder_service import DecoderService
from kwspot.dependencies import get_decoder_service
from kwspot.errors import FormatError
from kwspot.formats import SDKF_MAGIC, decode_sdkf, scores_from_csv
from kwspot.metrics import compute_eer
from kwspot.models import (
    DetectionView,
    EerRequest,
    EerResponse,
    HealthResponse,
    ModelResponse,
    PostMode,
    SpotResponse,
)

logger = logging.getLogger(__name__)

router = APIRouter()


@router.get("/health", response_model=HealthResponse)
async def health_check():
    """Health check endpoint"""
    return HealthResponse(
        status="healthy",
        app_name=settings.app_name,
        version=settings.app_version,
        model_loaded=dependencies.decoder_service is not None,
        timestamp=datetime.now()
    )


@router.get("/model", response_model=ModelResponse)
async def model_summary(decoder: DecoderService = Depends(get_decoder_service)):
    """Describe the loaded model"""
    config = decoder.config
    return ModelResponse(
        topology=config.topology.kind.value,
        label_mode=config.topology.label_mode.value,
        criterion=config.criterion.kind.value,
        num_classes=decoder.model.num_classes,
        num_parameters=decoder.model.num_parameters,
        subsample=decoder.model.subsample,
        keywords=decoder.system.keyword_names,
        modes=[m.value for m in decoder.available_modes()],
    )


def _parse_features(content: bytes):
    if content[:4] == SDKF_MAGIC:
        return decode_sdkf(content)
    try:
        return scores_from_csv(content.decode("utf-8"))
    except UnicodeDecodeError:
        raise FormatError("upload is neither SDKF nor CSV") from None


@router.post("/spot", response_model=SpotResponse)
async def spot_keywords(
        file: UploadFile = File(...),
        post: Optional[PostMode] = Form(None),
        filler_weight: Optional[float] = Form(None),
        utt_id: str = Form("upload"),
        decoder: DecoderService = Depends(get_decoder_service)
):
    """
    Spot keywords in one utterance

    Args:
        file: feature matrix as SDKF bytes or `t,u0,u1,...` CSV
        post: post-processing mode (defaults to the experiment's mode)
        filler_weight: keyword-filler weight override
        utt_id: name echoed in the response
    """
    content = await file.read()
    if not content:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail="Empty upload")
    features = _parse_features(content)
    mode = post or decoder.config.post
    if mode not in decoder.available_modes():
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST,
                            detail=f"Mode {mode.value} is not available for this model")

    log_post = decoder.log_posteriors(features)
    detections = decoder.detect(utt_id, features, mode, filler_weight, log_post=log_post)
    logger.info(f"Spotted {len(detections)} keywords in {utt_id} ({mode.value}, {log_post.T} frames)")
    return SpotResponse(
        utt_id=utt_id,
        mode=mode.value,
        frames=log_post.T,
        detections=[
            DetectionView(
                keyword=decoder.system.keyword_names[d.keyword],
                start_frame=d.start_frame,
                end_frame=d.end_frame,
                score=d.score,
            )
            for d in detections
        ],
        filler_weight=filler_weight if mode in (PostMode.KWFILLER, PostMode.CASCADE) else None,
    )


@router.post("/eer", response_model=EerResponse)
async def equal_error_rate(request: EerRequest):
    """EER and ROC of positive/negative trial scores"""
    result = compute_eer(request.positive, request.negative)
    return EerResponse(eer=result.eer, roc=result.roc)
