"""
Session metadata: who drove, in which scenario and in what condition.

Written into every manifest and used by the study to group sessions.
"""

from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field


class ScenarioClass(str, Enum):
    URBAN = "URBAN"
    INTERURBAN = "INTERURBAN"

    @property
    def max_speed_kmh(self) -> float:
        return 60.0 if self is ScenarioClass.URBAN else 120.0


class GearShift(str, Enum):
    AUTOMATIC = "AUTOMATIC"
    MANUAL = "MANUAL"


class PhysicalState(str, Enum):
    RESTED = "RESTED"
    TIRED = "TIRED"
    UNSPECIFIED = "UNSPECIFIED"


class SessionMeta(BaseModel):
    """Participant and scenario description attached to every session."""

    participant_id: str = Field(min_length=1)
    scenario_class: ScenarioClass = ScenarioClass.URBAN
    gear_shift: GearShift = GearShift.AUTOMATIC
    physical_state: PhysicalState = PhysicalState.UNSPECIFIED
    kss: Optional[int] = Field(default=None, ge=1, le=9)
    sss: Optional[int] = Field(default=None, ge=1, le=7)
    ess: Optional[int] = Field(default=None, ge=0, le=24)
    license_years: float = Field(default=0.0, ge=0)
    game_experience: int = Field(default=1, ge=1, le=10)
    racing_experience: int = Field(default=1, ge=1, le=10)
    age: float = Field(default=30.0, gt=0)
