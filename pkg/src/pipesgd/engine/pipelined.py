"""Turn-based pipelined data-parallel SGD.

The backward pass emits layer gradients from the output layer down.  Each
emission is a *turn*: the rank publishes its local gradient for that layer
and then does whatever communication has become possible, without waiting
for anything:

  * child contributions that finished arriving are folded into the local
    gradient, in ascending child order (sequentially gated, so the float
    summation order is identical on every run and equal to the reference
    optimizer's),
  * a layer whose children are all folded is forwarded up the reduction
    tree - or, on the master, applied via the update rule and broadcast
    back down,
  * freshly arrived model layers are installed and forwarded to broadcast
    children.

After the last turn the rank keeps polling until every layer's gradient
went up and every updated layer came back.  No barrier runs anywhere in
or between iterations; iteration parity keeps the at-most-two in-flight
iterations apart (receive slots and notification ids are double-buffered,
and notification values carry iteration+1 so early traffic from the next
iteration is recognized and left pending).

Weight buffers are safe to overwrite mid-backward because an updated
layer l can only arrive after this rank contributed its own layer-l
gradient, and the backward pass reads layer l's old weights for the last
time while producing exactly that gradient.
"""

from __future__ import annotations

import time

from .. import net
from ..buffers import buffer_axpy
from ..errors import ProtocolError
from .layout import SEG_GRAD, SEG_MODEL
from .runtime import _IDLE_SLEEP_S, RankBase, TurnState
from .sgd import master_update


class PipelinedRank(RankBase):
    def begin_iteration(self, k: int) -> None:
        self.k = k
        self.parity = k & 1
        self.state = TurnState(self.num_layers, len(self.red_children))

    def run_turn(self, layer: int, gradient) -> None:
        """Publish one layer's local gradient and advance communication."""
        self.grad_views[layer][:] = gradient
        self.state.local_gradient_ready[layer] = True
        if self.cfg.world_size == 1:
            self._apply_update(layer)
            self.state.gradient_forwarded[layer] = True
            self.state.model_arrived[layer] = True
            return
        self._comm_pass()

    def finalize_iteration(self) -> None:
        """Poll until the iteration's protocol obligations are met.

        Progress resets the watchdog; a quiet period longer than the
        configured timeout means a peer died or the protocol wedged, and
        raises with a state dump instead of hanging forever.
        """
        t0 = time.monotonic_ns()
        deadline = time.monotonic() + self.cfg.finalize_timeout_s
        while not self._iteration_done():
            if self._comm_pass():
                deadline = time.monotonic() + self.cfg.finalize_timeout_s
            elif time.monotonic() > deadline:
                raise ProtocolError(
                    f"rank {self.rank}: no progress for {self.cfg.finalize_timeout_s:.1f}s "
                    f"finishing iteration {self.k}: {self._dump_state()}"
                )
            else:
                time.sleep(_IDLE_SLEEP_S)
        self._wait_tickets()
        self._record("finalize", -1, t0, time.monotonic_ns())

    def _train_iteration(self, k: int) -> None:
        self.begin_iteration(k)
        x, t = self._shard(k)
        t0 = time.monotonic_ns()
        _, cache = net.forward(self.specs, self.model_views, x)
        self._record("forward", -1, t0, time.monotonic_ns())

        self._turn_clock = time.monotonic_ns()

        def emit(layer: int, gradient) -> None:
            self._inflate()
            self._record("backward_layer", layer, self._turn_clock, time.monotonic_ns())
            self.run_turn(layer, gradient)
            self._turn_clock = time.monotonic_ns()

        _, loss = net.backward_from_cache(self.specs, self.model_views, cache, t, emit)
        self.losses.append(loss)
        self.finalize_iteration()

    # Internal steps ---------------------------------------------------------

    def _apply_update(self, layer: int) -> None:
        t0 = time.monotonic_ns()
        self.model_views[layer][:] = master_update(
            self.model_views[layer], self.grad_views[layer], self.cfg.epsilon
        )
        self._record("master_update", layer, t0, time.monotonic_ns())

    def _comm_pass(self) -> bool:
        """One non-blocking sweep over both receive segments.

        Returns True when at least one notification was consumed, which is
        the liveness signal the finalize watchdog feeds on.
        """
        t_pass = time.monotonic_ns()
        st = self.state
        progressed = False
        if self.red_children:
            for kind, slot, layer, _parity in self._consume(
                SEG_GRAD, self._grad_ids, self._grad_poll_span
            ):
                if kind != "layer":
                    raise ProtocolError(
                        f"rank {self.rank}: whole-model gradient chunk during a layer-wise run"
                    )
                progressed = True
                if self._count_chunk(("g", slot, layer), self.layout.layer_chunks[layer]):
                    st.child_arrived[layer].add(slot)
                    self._record("recv_notify", layer, t_pass, time.monotonic_ns())
        arrived_models: list[int] = []
        if self.bc_parent is not None:
            for kind, _slot, layer, _parity in self._consume(
                SEG_MODEL, self._model_ids, self._model_poll_span
            ):
                if kind != "layer":
                    raise ProtocolError(
                        f"rank {self.rank}: whole-model broadcast chunk during a layer-wise run"
                    )
                progressed = True
                if self._count_chunk(("m", layer), self.layout.layer_chunks[layer]):
                    arrived_models.append(layer)
        self._advance_folds()
        for layer in sorted(arrived_models):
            self._handle_model_arrival(layer, t_pass)
        return progressed

    def _count_chunk(self, key: tuple, target: int) -> bool:
        """Count one consumed chunk notification; True when the transfer completed."""
        seen = self.state.chunks.get(key, 0) + 1
        if seen > target:
            raise ProtocolError(
                f"rank {self.rank}: transfer {key} delivered more than its {target} chunks"
            )
        self.state.chunks[key] = seen
        return seen == target

    def _advance_folds(self) -> None:
        """Fold arrived child data and forward every layer that became complete.

        Child slot c for layer l folds only after slots 0..c-1 folded; a
        layer goes up (or, on the master, into the update) only when its
        local gradient is published and all child slots are folded.
        """
        st = self.state
        for layer in range(self.num_layers):
            if not st.local_gradient_ready[layer] or st.gradient_forwarded[layer]:
                continue
            while st.next_fold[layer] < st.num_children and st.next_fold[layer] in st.child_arrived[layer]:
                slot = st.next_fold[layer]
                t0 = time.monotonic_ns()
                buffer_axpy(1.0, self._grad_rx(slot, layer, self.parity), self.grad_views[layer])
                self._record("reduce_local", layer, t0, time.monotonic_ns())
                self.fold_counts[layer] += 1
                st.next_fold[layer] += 1
            if st.next_fold[layer] == st.num_children:
                self._complete_gradient(layer)

    def _complete_gradient(self, layer: int) -> None:
        st = self.state
        if self.is_master:
            self._apply_update(layer)
            if self.bc_children:
                self._send_model_layer(layer)
            st.model_arrived[layer] = True
        else:
            self._send_gradient_layer(layer)
        st.gradient_forwarded[layer] = True

    def _handle_model_arrival(self, layer: int, t_pass: int) -> None:
        st = self.state
        if st.model_arrived[layer]:
            raise ProtocolError(f"rank {self.rank}: duplicate model update for layer {layer}")
        if not st.gradient_forwarded[layer]:
            raise ProtocolError(
                f"rank {self.rank}: model layer {layer} arrived before this rank's "
                "gradient contribution went up"
            )
        self._record("recv_notify", layer, t_pass, time.monotonic_ns())
        self.model_views[layer][:] = self._model_rx(layer, self.parity)
        if self.bc_children:
            self._send_model_layer(layer)
        st.model_arrived[layer] = True

    def _iteration_done(self) -> bool:
        st = self.state
        return all(st.gradient_forwarded) and all(st.model_arrived)

    def _dump_state(self) -> str:
        st = self.state
        waiting = []
        for layer in range(self.num_layers):
            if not st.gradient_forwarded[layer]:
                missing = [c for c in range(st.num_children) if c not in st.child_arrived[layer]]
                waiting.append(f"layer {layer} gradient (children pending: {missing})")
            elif not st.model_arrived[layer]:
                waiting.append(f"layer {layer} model update")
        return "; ".join(waiting) or "nothing pending"
