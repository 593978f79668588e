from typing import Iterable, List, Optional, Sequence

from cpheno.config import PROMPT_TEMPLATES
from cpheno.errors import InputError, ParameterError

PLACEHOLDER = "[CLASS_NAME]"


class PromptTemplateSet:
    """Ordered prompt templates, each holding [CLASS_NAME] exactly once"""

    def __init__(self, templates: Iterable[str]):
        self.templates: List[str] = list(templates)
        if not self.templates:
            raise ParameterError("empty prompt template set")
        for template in self.templates:
            if template.count(PLACEHOLDER) != 1:
                raise ParameterError(f"template must contain {PLACEHOLDER} exactly once: {template!r}")

    def __len__(self):
        return len(self.templates)

    def __iter__(self):
        return iter(self.templates)

    def instantiate(self, class_name: str) -> List[str]:
        return [t.replace(PLACEHOLDER, class_name) for t in self.templates]

    @classmethod
    def load(cls, path: str) -> "PromptTemplateSet":
        """One template per line; blank lines are ignored"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = [line.strip() for line in f]
        except OSError as e:
            raise InputError(f"cannot read prompt templates {path}: {e}") from e
        return cls(line for line in lines if line)

    @classmethod
    def default(cls) -> "PromptTemplateSet":
        return cls.load(PROMPT_TEMPLATES)


def as_template_set(templates: Optional[Sequence[str]]) -> PromptTemplateSet:
    if templates is None:
        return PromptTemplateSet.default()
    if isinstance(templates, PromptTemplateSet):
        return templates
    return PromptTemplateSet(templates)
