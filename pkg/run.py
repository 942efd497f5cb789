#!/usr/bin/env python3
"""
Serve the keyword spotter; set KWSPOT_MODEL_DIR to a trained work directory
"""
import uvicorn

from kwspot.config import settings

if __name__ == "__main__":
    uvicorn.run(
        "kwspot.main:app",
        host="0.0.0.0",
        port=8001,
        reload=settings.debug,
        log_level=settings.log_level.lower(),
    )
