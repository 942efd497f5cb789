from typing import Optional

from fastapi import HTTPException

from kwspot.decoder_service import DecoderService

# Global decoder instance, set at startup when a trained model is configured
decoder_service: Optional[DecoderService] = None


def set_decoder_service(service: Optional[DecoderService]):
    """Set the global decoder service instance"""
    global decoder_service
    decoder_service = service


def get_decoder_service() -> DecoderService:
    """Dependency to get the global decoder service instance"""
    if decoder_service is None:
        raise HTTPException(status_code=404, detail="No keyword spotting model loaded")
    return decoder_service
