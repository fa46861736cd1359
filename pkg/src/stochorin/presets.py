"""Named study configurations for the benchmark figure layouts.

Each preset carries two anchor parameter sets.  The full-size anchor uses the
benchmark-scale constants (reference step 1/4096, meshes around 1/50 and 1/20,
hundreds of realizations); it is days of CPU, not CI material.  The desk
anchor is the documented scaled-down surrogate: meshes snapped to the nearest
power of two below the full-size value (the reference mesh must nest the
coarse ones here, so 50 -> 32 and 20 -> 16), the reference step coarsened
where the measurement tolerates it, and the realization count multiplied by
``scale``.  The half-order studies (fig5_5, fig5_7) keep the full-size
reference step: a coupled reference at k0 suppresses the gap at step k by
roughly (1 - sqrt(k0/k)), which visibly steepens fitted slopes unless
k0 << min(k).  The quarter-order sweeps tolerate a coarser reference because
their slope is read further from the reference step.

``scaled(1.0)`` returns the full-size configuration verbatim.  Any
``scale < 1`` selects the desk anchor and shrinks the realization count to
``max(4, round(n_realizations * scale))``; keyword overrides are applied last
so callers can pin individual fields (seed, tolerances, ...).
"""

from __future__ import annotations

from dataclasses import dataclass

from .study import StudySpec

_RATE_KS = (1 / 16, 1 / 32, 1 / 64, 1 / 128)
_FIXED_MESH_KS = tuple(1.0 / (32 * 2**i) for i in range(6))


@dataclass(frozen=True)
class Preset:
    """A named pair of full-size and desk-size study configurations."""

    name: str
    description: str
    full: dict
    desk: dict

    def scaled(self, scale: float = 1.0, **overrides) -> StudySpec:
        """Build the StudySpec at ``scale`` (1.0 = full size) with overrides."""
        if not 0.0 < scale <= 1.0:
            raise ValueError(f"scale must lie in (0, 1], got {scale}")
        kwargs = dict(self.full if scale == 1.0 else self.desk)
        if scale < 1.0:
            kwargs["n_realizations"] = max(4, round(kwargs["n_realizations"] * scale))
        kwargs.update(overrides)
        return StudySpec(**kwargs)


def _preset(name, description, full, desk_changes):
    desk = dict(full)
    desk.update(desk_changes)
    return Preset(name=name, description=description, full=full, desk=desk)


PRESETS = {
    p.name: p
    for p in [
        _preset(
            "fig5_1",
            "standard scheme, temporal rate sweep, strong noise (coeff 10)",
            full=dict(
                variant="standard",
                mesh_sizes=(50,),
                time_steps=_RATE_KS,
                k0=1 / 4096,
                reference_n=50,
                n_realizations=500,
                noise_coeff=10.0,
            ),
            desk_changes=dict(mesh_sizes=(32,), reference_n=32, k0=1 / 1024),
        ),
        _preset(
            "fig5_3",
            "standard scheme, fixed mesh, shrinking time step (coeff 10)",
            full=dict(
                variant="standard",
                mesh_sizes=(20,),
                time_steps=_FIXED_MESH_KS,
                k0=1 / 4096,
                reference_n=40,
                n_realizations=500,
                noise_coeff=10.0,
            ),
            desk_changes=dict(mesh_sizes=(16,), reference_n=32, k0=1 / 2048),
        ),
        _preset(
            "fig5_4",
            "standard scheme, balanced h ~ k sweep (coeff 10)",
            full=dict(
                variant="standard",
                mesh_sizes=(8, 16, 32, 64),
                time_steps=(1 / 8, 1 / 16, 1 / 32, 1 / 64),
                k0=1 / 4096,
                reference_n=128,
                n_realizations=500,
                noise_coeff=10.0,
            ),
            desk_changes=dict(
                mesh_sizes=(8, 16, 32),
                time_steps=(1 / 8, 1 / 16, 1 / 32),
                reference_n=64,
                k0=1 / 512,
            ),
        ),
        _preset(
            "fig5_5",
            "modified scheme, temporal rate sweep (coeff 1)",
            full=dict(
                variant="modified",
                mesh_sizes=(50,),
                time_steps=_RATE_KS,
                k0=1 / 4096,
                reference_n=50,
                n_realizations=800,
                noise_coeff=1.0,
            ),
            desk_changes=dict(mesh_sizes=(32,), reference_n=32),
        ),
        _preset(
            "fig5_6",
            "modified scheme, fixed mesh, shrinking time step (coeff 1)",
            full=dict(
                variant="modified",
                mesh_sizes=(20,),
                time_steps=_FIXED_MESH_KS,
                k0=1 / 4096,
                reference_n=40,
                n_realizations=800,
                noise_coeff=1.0,
            ),
            desk_changes=dict(mesh_sizes=(16,), reference_n=32, k0=1 / 2048),
        ),
        _preset(
            "fig5_7",
            "modified scheme, balanced h ~ sqrt(k) sweep (coeff 1)",
            full=dict(
                variant="modified",
                mesh_sizes=(4, 8, 16, 32),
                time_steps=(1 / 16, 1 / 64, 1 / 256, 1 / 1024),
                k0=1 / 4096,
                reference_n=64,
                n_realizations=800,
                noise_coeff=1.0,
            ),
            desk_changes=dict(
                mesh_sizes=(8, 16, 32),
                time_steps=(1 / 8, 1 / 32, 1 / 128),
                reference_n=32,
            ),
        ),
    ]
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ValueError(f"unknown preset {name!r}; known presets: {known}") from None
