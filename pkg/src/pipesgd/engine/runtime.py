"""Shared per-rank machinery for the distributed training patterns.

A rank owns three segments (see :mod:`.layout`), works on float64 views
into them, and talks to its reduction/broadcast tree neighbours through
one-sided notify-writes.  Subclasses implement one training iteration;
everything here - segment setup, chunked transfers, notification decoding,
flight timing, result collection - is pattern independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..buffers import Model
from ..errors import ConfigError, ProtocolError
from ..net import init_model
from ..timeline import Recorder, TimelineEvent
from ..topology import build_broadcast_tree, build_reduction_tree
from ..transport.base import TransportBase, WriteRequest
from .config import TrainConfig
from .layout import SEG_GRAD, SEG_MODEL, SEG_WORK, SegmentLayout
from .sgd import batch_indices, shard_bounds

_IDLE_SLEEP_S = 2e-5


@dataclass
class RankResult:
    """What one rank hands back after its training loop."""

    rank: int
    world_size: int
    iterations: int
    model: list[np.ndarray]
    losses: list[float]
    barrier_calls: int
    fold_counts: list[int]
    wall_ns: int
    events: list[TimelineEvent] = field(default_factory=list)


class TurnState:
    """Communication bookkeeping for one in-flight iteration."""

    def __init__(self, num_layers: int, num_children: int):
        self.local_gradient_ready = [False] * num_layers
        self.gradient_forwarded = [False] * num_layers
        self.model_arrived = [False] * num_layers
        # child slots whose layer contribution has fully arrived
        self.child_arrived: list[set[int]] = [set() for _ in range(num_layers)]
        # how many child slots have been folded, per layer; folds happen in
        # ascending slot order so the float summation order is fixed
        self.next_fold = [0] * num_layers
        self.num_children = num_children
        # consumed notification count per transfer key
        self.chunks: dict[tuple, int] = {}


class RankBase:
    def __init__(
        self,
        config: TrainConfig,
        dataset,
        transport: TransportBase,
        recorder: Recorder | None = None,
    ):
        config.validate()
        if transport.world_size != config.world_size:
            raise ConfigError(
                f"transport spans {transport.world_size} ranks, config expects {config.world_size}"
            )
        self.cfg = config
        self.dataset = dataset
        self.tr = transport
        self.rec = recorder
        self.rank = transport.rank
        self.specs = config.specs()
        self.num_layers = len(self.specs)
        self.layout = SegmentLayout([s.param_count for s in self.specs], config.chunk_bytes)

        red = build_reduction_tree(config.world_size)
        bc = build_broadcast_tree(config.world_size)
        self.red_children = red.children[self.rank]
        self.red_parent = red.parent.get(self.rank)
        self.bc_children = bc.children[self.rank]
        self.bc_parent = bc.parent.get(self.rank)
        self.is_master = self.rank == 0
        # this rank's slot index in its reduction parent's child list
        self.parent_slot = (
            None if self.red_parent is None else red.children[self.red_parent].index(self.rank)
        )
        # needed to address id blocks inside the parent's gradient segment
        self.parent_child_count = (
            0 if self.red_parent is None else len(red.children[self.red_parent])
        )

        lay = self.layout
        self.seg_work = transport.segment_create(SEG_WORK, lay.work_size, 1)
        self.seg_model = transport.segment_create(SEG_MODEL, lay.model_rx_size, lay.model_notif_count)
        nc = len(self.red_children)
        self.seg_grad = transport.segment_create(
            SEG_GRAD, lay.grad_rx_size(nc), lay.grad_notif_count(nc)
        )

        self.model_views = [
            self.seg_work.view_f64(lay.work_model_offset(l), self.specs[l].param_count)
            for l in range(self.num_layers)
        ]
        self.grad_views = [
            self.seg_work.view_f64(lay.work_grad_offset(l), self.specs[l].param_count)
            for l in range(self.num_layers)
        ]
        self.model_region = self.seg_work.view_f64(0, lay.total_params)
        self.grad_region = self.seg_work.view_f64(lay.total_bytes, lay.total_params)

        start = init_model(config.seed, self.specs)
        for l in range(self.num_layers):
            self.model_views[l][:] = start.layers[l]

        self._build_decoders(nc)
        self.losses: list[float] = []
        self.fold_counts = [0] * self.num_layers
        self._tickets = []
        self._flights: list[tuple[str, int, int, int, list]] = []
        self.k = 0
        self.parity = 0

    # Notification decoding ------------------------------------------------

    def _build_decoders(self, num_children: int) -> None:
        lay = self.layout
        block = lay._layer_block
        bulk = lay._bulk_block
        self._grad_ids: dict[int, tuple] = {}
        for slot in range(num_children):
            for p in (0, 1):
                for l in range(lay.num_layers):
                    base = lay.grad_notif_base(slot, l, p)
                    for nid in range(base, base + block):
                        self._grad_ids[nid] = ("layer", slot, l, p)
                bbase = lay.grad_bulk_base(num_children, slot, p)
                for nid in range(bbase, bbase + bulk):
                    self._grad_ids[nid] = ("bulk", slot, None, p)
        self._model_ids: dict[int, tuple] = {}
        for p in (0, 1):
            for l in range(lay.num_layers):
                base = lay.model_notif_base(l, p)
                for nid in range(base, base + block):
                    self._model_ids[nid] = ("layer", None, l, p)
            bbase = lay.model_bulk_base(p)
            for nid in range(bbase, bbase + bulk):
                self._model_ids[nid] = ("bulk", None, None, p)
        self._grad_poll_span = (1, lay.grad_notif_count(num_children) - 1)
        self._model_poll_span = (1, lay.model_notif_count - 1)

    # Receive-slot views ---------------------------------------------------

    def _grad_rx(self, slot: int, layer: int, parity: int) -> np.ndarray:
        off = self.layout.grad_slot_offset(slot, layer, parity)
        return self.seg_grad.view_f64(off, self.specs[layer].param_count)

    def _grad_bulk_rx(self, slot: int, parity: int) -> np.ndarray:
        off = self.layout.grad_bulk_offset(slot, parity)
        return self.seg_grad.view_f64(off, self.layout.total_params)

    def _model_rx(self, layer: int, parity: int) -> np.ndarray:
        off = self.layout.model_slot_offset(layer, parity)
        return self.seg_model.view_f64(off, self.specs[layer].param_count)

    def _model_bulk_rx(self, parity: int) -> np.ndarray:
        off = self.layout.model_bulk_offset(parity)
        return self.seg_model.view_f64(off, self.layout.total_params)

    # Event recording ------------------------------------------------------

    def _record(self, kind: str, layer: int, t0: int, t1: int) -> None:
        if self.rec is not None:
            self.rec.record(kind, self.k, layer, t0, t1)

    # Sending ---------------------------------------------------------------

    def _send(
        self,
        dest_rank: int,
        remote_segment: int,
        remote_offset: int,
        local_offset: int,
        nbytes: int,
        notif_base: int,
        kind: str,
        layer: int,
    ) -> None:
        """Chunked notify-write of SEG_WORK bytes to one destination.

        Each chunk carries a notification from the transfer's id block; the
        value is iteration+1 so receivers can tell live data from leftovers
        (value 0 means "never fired").  The flight is timed from here to the
        completion of the last chunk's ticket.
        """
        lay = self.layout
        n = lay.chunk_count(nbytes)
        value = self.k + 1
        t0 = time.monotonic_ns()
        tickets = []
        sent = 0
        for j in range(n):
            size = min(lay.chunk_bytes, nbytes - sent)
            req = WriteRequest(
                local_segment=SEG_WORK,
                local_offset=local_offset + sent,
                rank=dest_rank,
                remote_segment=remote_segment,
                remote_offset=remote_offset + sent,
                size=size,
                notification_id=lay.chunk_notification_id(notif_base, j, n),
                notification_value=value,
            )
            tickets.append(self.tr.write_notify(req))
            sent += size
        self._tickets.extend(tickets)
        self._flights.append((kind, self.k, layer, t0, tickets))

    def _send_gradient_layer(self, layer: int) -> None:
        lay = self.layout
        self._send(
            self.red_parent,
            SEG_GRAD,
            lay.grad_slot_offset(self.parent_slot, layer, self.parity),
            lay.work_grad_offset(layer),
            lay.layer_bytes[layer],
            lay.grad_notif_base(self.parent_slot, layer, self.parity),
            "send_trigger",
            layer,
        )

    def _send_model_layer(self, layer: int) -> None:
        lay = self.layout
        for child in self.bc_children:
            self._send(
                child,
                SEG_MODEL,
                lay.model_slot_offset(layer, self.parity),
                lay.work_model_offset(layer),
                lay.layer_bytes[layer],
                lay.model_notif_base(layer, self.parity),
                "model_forward",
                layer,
            )

    def _send_gradient_bulk(self) -> None:
        lay = self.layout
        self._send(
            self.red_parent,
            SEG_GRAD,
            lay.grad_bulk_offset(self.parent_slot, self.parity),
            lay.total_bytes,  # gradient region sits after the model in SEG_WORK
            lay.total_bytes,
            lay.grad_bulk_base(self.parent_child_count, self.parent_slot, self.parity),
            "send_trigger",
            -1,
        )

    def _send_model_bulk(self) -> None:
        lay = self.layout
        for child in self.bc_children:
            self._send(
                child,
                SEG_MODEL,
                lay.model_bulk_offset(self.parity),
                0,  # whole model region sits at the start of SEG_WORK
                lay.total_bytes,
                lay.model_bulk_base(self.parity),
                "model_forward",
                -1,
            )

    def _wait_tickets(self) -> None:
        """Drain this iteration's outgoing writes and time their flights.

        Source buffers in SEG_WORK are reused next iteration, so every
        ticket must complete before the iteration ends.
        """
        if self._tickets:
            self.tr.ticket_wait_all(self._tickets, timeout=self.cfg.finalize_timeout_s)
        if self.rec is not None:
            for kind, k, layer, t0, tickets in self._flights:
                t1 = max(t.completed_at_ns for t in tickets)
                self.rec.record(kind, k, layer, t0, max(t0, t1))
        self._tickets = []
        self._flights = []

    # Batch handling ---------------------------------------------------------

    def _shard(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        idx = batch_indices(self.cfg.seed, k, self.cfg.batch_size, len(self.dataset))
        lo, hi = shard_bounds(self.cfg.batch_size, self.cfg.world_size, self.rank)
        return self.dataset.take(idx[lo:hi])

    def _inflate(self) -> None:
        if self.cfg.compute_inflation_ns > 0:
            time.sleep(self.cfg.compute_inflation_ns * 1e-9)

    # Run loop ----------------------------------------------------------------

    def _train_iteration(self, k: int) -> None:
        raise NotImplementedError

    def run(self) -> RankResult:
        """Execute the configured number of iterations and collect results.

        One rendezvous barrier runs before the loop so no rank starts
        writing before all peers have registered their segments; it is not
        part of the measured loop (barrier_calls reports the in-loop count).
        """
        if self.cfg.world_size > 1:
            self.tr.barrier()
        base_barriers = self.tr.barrier_calls
        t0 = time.monotonic_ns()
        for k in range(self.cfg.iterations):
            self._train_iteration(k)
        wall_ns = time.monotonic_ns() - t0
        return RankResult(
            rank=self.rank,
            world_size=self.cfg.world_size,
            iterations=self.cfg.iterations,
            model=[np.array(v, copy=True) for v in self.model_views],
            losses=list(self.losses),
            barrier_calls=self.tr.barrier_calls - base_barriers,
            fold_counts=list(self.fold_counts),
            wall_ns=wall_ns,
            events=list(self.rec.events) if self.rec is not None else [],
        )

    # Notification consumption -------------------------------------------------

    def _consume(self, segment_id: int, decoder: dict[int, tuple], span: tuple[int, int]):
        """Consume current-iteration notifications on one segment.

        Returns decoded descriptors of consumed notifications.  Traffic for
        iteration k+1 (value k+2 on opposite-parity ids) is left in place
        for the next iteration; anything else unexpected is a protocol
        violation and raises.
        """
        hits = self.tr.notify_poll(segment_id, span[0], span[1])
        out = []
        for nid, value in hits:
            desc = decoder.get(nid)
            if desc is None:
                raise ProtocolError(f"rank {self.rank}: unassigned notification id {nid}")
            parity = desc[3]
            if value == self.k + 2 and parity == (self.k + 1) & 1:
                continue  # next iteration's data, not ours to consume
            if value != self.k + 1 or parity != self.parity:
                raise ProtocolError(
                    f"rank {self.rank}: iteration {self.k} saw notification value "
                    f"{value} on id {nid} (parity {parity})"
                )
            self.tr.notify_reset(segment_id, nid)
            out.append(desc)
        return out
