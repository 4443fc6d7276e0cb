from typing import Any, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, field_validator


class RoleDef(BaseModel):
    """One argument role of an event type"""

    model_config = ConfigDict(frozen=True, extra="ignore")

    name: str
    description: str = ""


class EventTypeDef(BaseModel):
    """One event type of the schema, roles kept in file order"""

    model_config = ConfigDict(frozen=True, extra="ignore")

    id: str
    name: str
    description: str = ""
    roles: Tuple[RoleDef, ...] = ()
    # accepted but unused by every algorithm
    parent: Optional[str] = None

    @field_validator("roles", mode="before")
    @classmethod
    def _roles_from_names(cls, value: Any) -> Any:
        # bare role names are shorthand for {"name": ...}
        if isinstance(value, (list, tuple)):
            return [{"name": item} if isinstance(item, str) else item for item in value]
        return value

    @property
    def role_names(self) -> List[str]:
        return [role.name for role in self.roles]
