from __future__ import annotations

from dataclasses import dataclass

from blowup_lab.data.spec_repo import SpecRepo
from blowup_lab.service.green_service import GreenService
from blowup_lab.service.interaction_service import InteractionService
from blowup_lab.service.linearized_service import LinearizedService
from blowup_lab.service.predictor_service import PredictorService
from blowup_lab.service.profile_service import ProfileService


@dataclass(frozen=True)
class Services:
    profiles: ProfileService
    green: GreenService
    interaction: InteractionService
    linearized: LinearizedService
    predictor: PredictorService
    spec_repo: SpecRepo


def build_services(threads: int = 1) -> Services:
    green = GreenService(threads=threads)
    interaction = InteractionService(green)
    return Services(
        profiles=ProfileService(),
        green=green,
        interaction=interaction,
        linearized=LinearizedService(threads=threads),
        predictor=PredictorService(green, interaction),
        spec_repo=SpecRepo(),
    )
