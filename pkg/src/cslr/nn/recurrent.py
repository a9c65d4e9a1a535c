"""LSTM layers over batched (B, T, D) sequences.

Sequences are padded at the tail; callers that mix lengths in one batch
reverse only the valid prefix (reverse_valid) before feeding the backward
direction, so padding never leaks into valid time steps.
"""

import numpy as np

from ..errors import ShapeError
from .functional import sigmoid
from .layers import Layer, glorot_uniform


def reverse_valid(x, lengths):
    """Reverse the first lengths[b] steps of each sequence, pads stay put."""
    out = x.copy()
    for b, n in enumerate(lengths):
        out[b, :n] = x[b, :n][::-1]
    return out


def zero_pads(x, lengths):
    """Zero every step at or beyond the sample's true length (in place)."""
    t = x.shape[1]
    mask = np.arange(t)[None, :] < np.asarray(lengths)[:, None]
    x *= mask.reshape(mask.shape + (1,) * (x.ndim - 2)).astype(x.dtype)
    return x


class LSTM(Layer):
    """Standard LSTM cell unrolled over time.

    Gate order in the fused matrices is (input, forget, candidate,
    output); the forget-gate bias starts at 1.
    """

    def __init__(self, input_size, hidden_size, rng=None, dtype=np.float32):
        super().__init__(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        wx = np.concatenate(
            [glorot_uniform(rng, input_size, h, (input_size, h), self.dtype) for _ in range(4)],
            axis=1,
        )
        wh = np.concatenate(
            [glorot_uniform(rng, h, h, (h, h), self.dtype) for _ in range(4)], axis=1
        )
        b = np.zeros(4 * h, dtype=self.dtype)
        b[h:2 * h] = 1.0
        self._register("Wx", wx)
        self._register("Wh", wh)
        self._register("b", b)

    def forward(self, x, train=False, return_all=True):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(f"lstm expects (B, T, {self.input_size}), got {x.shape}")
        bsz, t, _ = x.shape
        h = self.hidden_size
        wx, wh, b = self.params["Wx"], self.params["Wh"], self.params["b"]
        gates = np.empty((bsz, t, 4 * h), dtype=self.dtype)
        cells = np.empty((bsz, t, h), dtype=self.dtype)
        tanh_c = np.empty((bsz, t, h), dtype=self.dtype)
        hidden = np.empty((bsz, t, h), dtype=self.dtype)
        h_prev = np.zeros((bsz, h), dtype=self.dtype)
        c_prev = np.zeros((bsz, h), dtype=self.dtype)
        # per-step input projections keep results independent of how much
        # tail padding the batch carries (a fused (B*T, D) matmul would
        # round valid rows differently as T grows)
        for step in range(t):
            z = x[:, step] @ wx + h_prev @ wh + b
            i = sigmoid(z[:, :h])
            f = sigmoid(z[:, h:2 * h])
            g = np.tanh(z[:, 2 * h:3 * h])
            o = sigmoid(z[:, 3 * h:])
            c = f * c_prev + i * g
            tc = np.tanh(c)
            hs = o * tc
            gates[:, step, :h] = i
            gates[:, step, h:2 * h] = f
            gates[:, step, 2 * h:3 * h] = g
            gates[:, step, 3 * h:] = o
            cells[:, step] = c
            tanh_c[:, step] = tc
            hidden[:, step] = hs
            h_prev, c_prev = hs, c
        self._cache = (x, gates, cells, tanh_c, hidden)
        return hidden if return_all else hidden[:, -1]

    def backward(self, dh_seq):
        x, gates, cells, tanh_c, hidden = self._take_cache()
        bsz, t, _ = x.shape
        h = self.hidden_size
        dh_seq = np.ascontiguousarray(dh_seq, dtype=self.dtype)
        if dh_seq.ndim == 2:  # gradient only on the final hidden state
            full = np.zeros((bsz, t, h), dtype=self.dtype)
            full[:, -1] = dh_seq
            dh_seq = full
        wh = self.params["Wh"]
        dz_all = np.empty((bsz, t, 4 * h), dtype=self.dtype)
        dh_carry = np.zeros((bsz, h), dtype=self.dtype)
        dc_carry = np.zeros((bsz, h), dtype=self.dtype)
        for step in range(t - 1, -1, -1):
            i = gates[:, step, :h]
            f = gates[:, step, h:2 * h]
            g = gates[:, step, 2 * h:3 * h]
            o = gates[:, step, 3 * h:]
            tc = tanh_c[:, step]
            c_prev = cells[:, step - 1] if step > 0 else np.zeros((bsz, h), dtype=self.dtype)
            dh = dh_seq[:, step] + dh_carry
            dc = dc_carry + dh * o * (1.0 - tc * tc)
            do = dh * tc
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = dz_all[:, step]
            dz[:, :h] = di * i * (1.0 - i)
            dz[:, h:2 * h] = df * f * (1.0 - f)
            dz[:, 2 * h:3 * h] = dg * (1.0 - g * g)
            dz[:, 3 * h:] = do * o * (1.0 - o)
            dh_carry = dz @ wh.T
            dc_carry = dc * f
        h_prev_seq = np.concatenate(
            [np.zeros((bsz, 1, h), dtype=self.dtype), hidden[:, :-1]], axis=1
        )
        flat_dz = dz_all.reshape(bsz * t, 4 * h)
        self.grads["Wx"] += x.reshape(bsz * t, -1).T @ flat_dz
        self.grads["Wh"] += h_prev_seq.reshape(bsz * t, h).T @ flat_dz
        self.grads["b"] += flat_dz.sum(axis=0)
        return (flat_dz @ self.params["Wx"].T).reshape(bsz, t, self.input_size)


class BiLSTM(Layer):
    """Forward and time-reversed LSTM passes concatenated per step.

    Output width is 2*hidden_size.  lengths keeps the backward direction
    honest under tail padding: only the valid prefix is reversed.
    """

    def __init__(self, input_size, hidden_size, rng=None, dtype=np.float32):
        super().__init__(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.fwd = LSTM(input_size, hidden_size, rng=rng, dtype=dtype)
        self.bwd = LSTM(input_size, hidden_size, rng=rng, dtype=dtype)
        for name, lstm in (("fwd", self.fwd), ("bwd", self.bwd)):
            for key, value in lstm.params.items():
                self.params[f"{name}.{key}"] = value
                self.grads[f"{name}.{key}"] = lstm.grads[key]

    def forward(self, x, lengths=None, train=False):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if lengths is None:
            lengths = np.full(x.shape[0], x.shape[1], dtype=np.int64)
        out_f = self.fwd.forward(x, train=train)
        out_b = self.bwd.forward(reverse_valid(x, lengths), train=train)
        out_b = reverse_valid(out_b, lengths)
        self._cache = lengths
        return np.concatenate([out_f, out_b], axis=2)

    def backward(self, dy):
        lengths = self._take_cache()
        h = self.hidden_size
        dy = np.ascontiguousarray(dy, dtype=self.dtype)
        dx = self.fwd.backward(dy[:, :, :h])
        dx_b = self.bwd.backward(reverse_valid(dy[:, :, h:], lengths))
        dx += reverse_valid(dx_b, lengths)
        return dx
