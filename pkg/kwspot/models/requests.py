from typing import List

from pydantic import BaseModel, Field


class EerRequest(BaseModel):
    """Scores of keyword trials; higher means more keyword-like"""

    positive: List[float] = Field(default_factory=list)
    negative: List[float] = Field(default_factory=list)
