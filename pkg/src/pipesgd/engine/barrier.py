"""Bulk-synchronous baseline: compute, barrier, whole-model exchange, barrier.

Every iteration runs the full backward pass first, then fences all ranks,
moves gradients up and the updated model down as single whole-model
transfers, and fences again before the next iteration.  The arithmetic -
fold order up the tree, update rule - is element-for-element identical to
the pipelined engine, so both produce bit-identical parameters; only the
schedule differs.  The two barrier calls per iteration are exactly the
synchronization the pipelined engine exists to avoid.
"""

from __future__ import annotations

import time

from .. import net
from ..buffers import buffer_axpy
from ..errors import ProtocolError
from .layout import SEG_GRAD, SEG_MODEL
from .runtime import _IDLE_SLEEP_S, RankBase
from .sgd import master_update


class BarrierRank(RankBase):
    def _train_iteration(self, k: int) -> None:
        self.k = k
        self.parity = k & 1
        self._bulk_counts: dict[tuple, int] = {}

        x, t = self._shard(k)
        t0 = time.monotonic_ns()
        _, cache = net.forward(self.specs, self.model_views, x)
        self._record("forward", -1, t0, time.monotonic_ns())

        self._turn_clock = time.monotonic_ns()

        def emit(layer: int, gradient) -> None:
            self._inflate()
            self._record("backward_layer", layer, self._turn_clock, time.monotonic_ns())
            self.grad_views[layer][:] = gradient
            self._turn_clock = time.monotonic_ns()

        _, loss = net.backward_from_cache(self.specs, self.model_views, cache, t, emit)
        self.losses.append(loss)

        self._fence()
        if self.cfg.world_size == 1:
            for layer in range(self.num_layers):
                self._apply_update(layer)
        else:
            self._exchange()
            self._wait_tickets()
        self._fence()

    def _fence(self) -> None:
        t0 = time.monotonic_ns()
        self.tr.barrier()
        self._record("barrier", -1, t0, time.monotonic_ns())

    def _apply_update(self, layer: int) -> None:
        t0 = time.monotonic_ns()
        self.model_views[layer][:] = master_update(
            self.model_views[layer], self.grad_views[layer], self.cfg.epsilon
        )
        self._record("master_update", layer, t0, time.monotonic_ns())

    def _exchange(self) -> None:
        """Reduce gradients to the master and broadcast the updated model.

        Children fold in ascending order, and each rank blocks on every
        step - the communication structure of a network-synchronous run.
        """
        for slot in range(len(self.red_children)):
            self._wait_bulk(("gb", slot))
            t0 = time.monotonic_ns()
            buffer_axpy(1.0, self._grad_bulk_rx(slot, self.parity), self.grad_region)
            self._record("reduce_local", -1, t0, time.monotonic_ns())
            for layer in range(self.num_layers):
                self.fold_counts[layer] += 1
        if self.is_master:
            for layer in range(self.num_layers):
                self._apply_update(layer)
            if self.bc_children:
                self._send_model_bulk()
        else:
            self._send_gradient_bulk()
            self._wait_bulk(("mb",))
            self.model_region[:] = self._model_bulk_rx(self.parity)
            if self.bc_children:
                self._send_model_bulk()

    def _wait_bulk(self, key: tuple) -> None:
        """Block until one whole-model transfer has fully arrived."""
        target = self.layout.bulk_chunks
        t0 = time.monotonic_ns()
        deadline = time.monotonic() + self.cfg.finalize_timeout_s
        while self._bulk_counts.get(key, 0) < target:
            if self._pump():
                deadline = time.monotonic() + self.cfg.finalize_timeout_s
            elif time.monotonic() > deadline:
                raise ProtocolError(
                    f"rank {self.rank}: no progress for {self.cfg.finalize_timeout_s:.1f}s "
                    f"waiting on transfer {key} in iteration {self.k}"
                )
            else:
                time.sleep(_IDLE_SLEEP_S)
        self._record("recv_notify", -1, t0, time.monotonic_ns())

    def _pump(self) -> bool:
        """Consume whatever bulk chunks are currently visible."""
        progressed = False
        if self.red_children:
            for kind, slot, _layer, _parity in self._consume(
                SEG_GRAD, self._grad_ids, self._grad_poll_span
            ):
                if kind != "bulk":
                    raise ProtocolError(
                        f"rank {self.rank}: layer-wise gradient chunk during a whole-model run"
                    )
                self._count_bulk(("gb", slot))
                progressed = True
        if self.bc_parent is not None:
            for kind, _slot, _layer, _parity in self._consume(
                SEG_MODEL, self._model_ids, self._model_poll_span
            ):
                if kind != "bulk":
                    raise ProtocolError(
                        f"rank {self.rank}: layer-wise broadcast chunk during a whole-model run"
                    )
                self._count_bulk(("mb",))
                progressed = True
        return progressed

    def _count_bulk(self, key: tuple) -> None:
        seen = self._bulk_counts.get(key, 0) + 1
        if seen > self.layout.bulk_chunks:
            raise ProtocolError(
                f"rank {self.rank}: transfer {key} delivered more than its "
                f"{self.layout.bulk_chunks} chunks"
            )
        self._bulk_counts[key] = seen
