"""Pipeline rewrites that blunt the timing channel without changing outputs."""
from __future__ import annotations

from dataclasses import replace

from .pipeline import InvalidPipeline, PipelineSpec, Source, StageSpec


class NotAChain(InvalidPipeline):
    pass


def fuse_stages(spec: PipelineSpec, ids: list[str]) -> PipelineSpec:
    """Merge a linear run of stages into one stage running the composed operators."""
    if len(ids) < 2:
        raise NotAChain("need at least two stages to fuse")
    for sid in ids:
        if sid not in spec.stage_ids:
            raise NotAChain(f"unknown stage {sid!r}")
    for a, b in zip(ids, ids[1:]):
        if spec.downstream(a) != [b] or spec.upstream(b) != [a]:
            raise NotAChain(f"{a!r} -> {b!r} is not an exclusive edge")
        if a in spec.sinks or any(s.stage == b for s in spec.sources):
            raise NotAChain(f"{a!r} -> {b!r} has an external tap in the middle")
    members = [spec.stage(sid) for sid in ids]
    fused_id = "+".join(ids)
    ops = tuple(op for m in members for op in m.ops)
    fused = StageSpec(fused_id, ops, max(m.pad_target for m in members), members[0].batch_size)
    inner = set(ids)

    def rename(sid):
        if sid == ids[0] or sid == ids[-1]:
            return fused_id
        return sid

    stages = []
    for s in spec.stages:
        if s.id == ids[0]:
            stages.append(fused)
        elif s.id not in inner:
            stages.append(s)
    edges = [(rename(a), rename(b)) for a, b in spec.edges if not (a in inner and b in inner)]
    sources = [Source(src.stream, rename(src.stage), src.port) for src in spec.sources]
    sinks = [rename(s) for s in spec.sinks]
    return PipelineSpec(tuple(stages), tuple(edges), tuple(sources), tuple(sinks), spec.name)


def pad_stage(spec: PipelineSpec, stage_id: str, target: int) -> PipelineSpec:
    """Make every record of ``stage_id`` take at least ``target`` cycles."""
    if target < 0:
        raise ValueError("target must be non-negative")
    return spec.replace_stage(stage_id, replace(spec.stage(stage_id), pad_target=int(target)))


def batch_stage(spec: PipelineSpec, stage_id: str, batch_size: int) -> PipelineSpec:
    """Have the worker of ``stage_id`` ingest ``batch_size`` records at a time."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    return spec.replace_stage(stage_id, replace(spec.stage(stage_id), batch_size=int(batch_size)))


def pad_all(spec: PipelineSpec, target: int) -> PipelineSpec:
    for sid in spec.stage_ids:
        spec = pad_stage(spec, sid, target)
    return spec
