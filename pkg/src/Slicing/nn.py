"""
Small numpy neural-network kernel with exact reverse-mode gradients.

Arrays are float64 and batch-first: a window of observations is (batch, K, input_dim).
Every layer keeps its parameters and gradients in dictionaries of arrays; gradients
accumulate until zero_grad() so a block shared by two heads receives the sum of both.
"""
import copy
import json
import math
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    """Row-wise softmax, shifted by the row maximum."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _uniform_fan_in(rng, fan_in, shape):
    limit = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, shape)


class ParamVector:
    """
    Named parameter arrays with a flat view.
    The arrays are held by reference, so assigning through a ParamVector updates the network.
    """
    def __init__(self, arrays):
        self.arrays = dict(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def names(self):
        return list(self.arrays)

    @property
    def size(self):
        return int(sum(a.size for a in self.arrays.values()))

    def flat(self):
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def assign(self, flat):
        """Writes a flat vector back into the named arrays, in place."""
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.size:
            raise ValueError(f"Expected {self.size} values, got {flat.size}")
        offset = 0
        for a in self.arrays.values():
            a[...] = flat[offset:offset + a.size].reshape(a.shape)
            offset += a.size

    def subset(self, prefixes):
        return ParamVector({k: v for k, v in self.arrays.items() if k.startswith(tuple(prefixes))})

    def copy(self):
        return ParamVector({k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


class Dense:
    def __init__(self, n_in, n_out, rng):
        self.n_in = n_in
        self.n_out = n_out
        self.params = {"W": _uniform_fan_in(rng, n_in, (n_in, n_out)), "b": np.zeros(n_out)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads["W"] += self._x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"].T


class LSTM:
    """
    LSTM layer over a window, gates stacked as (input, forget, output, candidate).
    Attributes:
        params: W of shape (n_in + units, 4 * units) acting on [x_t, h_{t-1}], b of shape (4 * units,).
        activation (str): 'tanh' or 'relu', applied to the cell state to form h_t.
    """
    def __init__(self, n_in, units, rng, activation="tanh"):
        if activation not in ("tanh", "relu"):
            raise ValueError(f"Unknown LSTM activation '{activation}'")
        self.n_in = n_in
        self.units = units
        self.activation = activation
        self.params = {"W": _uniform_fan_in(rng, n_in + units, (n_in + units, 4 * units)),
                       "b": np.zeros(4 * units)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = []

    def _act(self, c):
        return np.tanh(c) if self.activation == "tanh" else relu(c)

    def _act_grad(self, c, act_c):
        return 1.0 - act_c ** 2 if self.activation == "tanh" else (c > 0).astype(float)

    def forward(self, x, state=None):
        """
        Runs the recurrence over the window.
        Args:
            x (np.ndarray): shape (batch, K, n_in).
            state (tuple): initial (h, c), zeros when not given.
        Raises:
            ValueError: If x does not have shape (batch, K, n_in).
        Returns:
            tuple: hidden sequence (batch, K, units) and the final hidden state (batch, units).
        """
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ValueError(f"LSTM expects (batch, K, {self.n_in}) input, got {x.shape}")
        batch, steps, _ = x.shape
        H = self.units
        if state is None:
            h, c = np.zeros((batch, H)), np.zeros((batch, H))
        else:
            h, c = state
        W, b = self.params["W"], self.params["b"]
        hs = np.zeros((batch, steps, H))
        self._cache = []
        for t in range(steps):
            zx = np.concatenate([x[:, t, :], h], axis=1)
            z = zx @ W + b
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            o = sigmoid(z[:, 2 * H:3 * H])
            g = np.tanh(z[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            act_c = self._act(c)
            h = o * act_c
            hs[:, t, :] = h
            self._cache.append((zx, c_prev, c, act_c, i, f, o, g))
        return hs, h

    def backward(self, dh_last=None, dh_seq=None):
        """
        Backpropagation through time.
        Args:
            dh_last (np.ndarray): gradient at the final hidden state, (batch, units).
            dh_seq (np.ndarray): gradient at every hidden state, (batch, K, units).
        Returns:
            np.ndarray: gradient with respect to the input window.
        """
        H = self.units
        W = self.params["W"]
        steps = len(self._cache)
        batch = self._cache[0][0].shape[0]
        dx = np.zeros((batch, steps, self.n_in))
        dh_next = np.zeros((batch, H))
        dc_next = np.zeros((batch, H))
        for t in reversed(range(steps)):
            zx, c_prev, c, act_c, i, f, o, g = self._cache[t]
            dh = dh_next.copy()
            if dh_seq is not None:
                dh += dh_seq[:, t, :]
            if dh_last is not None and t == steps - 1:
                dh += dh_last
            do = dh * act_c
            dc = dc_next + dh * o * self._act_grad(c, act_c)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g ** 2)],
                                axis=1)
            self.grads["W"] += zx.T @ dz
            self.grads["b"] += dz.sum(axis=0)
            dzx = dz @ W.T
            dx[:, t, :] = dzx[:, :self.n_in]
            dh_next = dzx[:, self.n_in:]
            dc_next = dc * f
        return dx


class MLP:
    """Dense layers with ReLU between them and a linear output."""
    def __init__(self, n_in, hidden, n_out, rng):
        sizes = [n_in, *hidden, n_out]
        self.sizes = sizes
        self.layers = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self._masks = []

    def forward(self, x):
        self._masks = []
        for layer in self.layers[:-1]:
            z = layer.forward(x)
            mask = z > 0
            self._masks.append(mask)
            x = z * mask
        return self.layers[-1].forward(x)

    def backward(self, dy):
        dy = self.layers[-1].backward(dy)
        for layer, mask in zip(reversed(self.layers[:-1]), reversed(self._masks)):
            dy = layer.backward(dy * mask)
        return dy

    def named_layers(self, prefix):
        return [(f"{prefix}.{k}", layer) for k, layer in enumerate(self.layers)]


class _Network:
    """Parameter bookkeeping shared by the networks below."""

    def _named_layers(self):
        raise NotImplementedError

    def parameters(self):
        return ParamVector({f"{name}.{k}": v for name, layer in self._named_layers()
                            for k, v in layer.params.items()})

    def gradients(self):
        return ParamVector({f"{name}.{k}": v for name, layer in self._named_layers()
                            for k, v in layer.grads.items()})

    def zero_grad(self):
        for _, layer in self._named_layers():
            for g in layer.grads.values():
                g[...] = 0.0

    def set_parameters(self, params):
        """Copies values from another ParamVector with the same names."""
        own = self.parameters()
        if own.names() != params.names():
            raise ValueError("Parameter names do not match")
        for name, array in own.items():
            array[...] = params[name]

    def copy(self):
        return copy.deepcopy(self)

    @staticmethod
    def _batched(window):
        window = np.asarray(window, dtype=float)
        return (window[None], True) if window.ndim == 2 else (window, False)


class ActorCriticNet(_Network):
    def __init__(self, input_dim, num_actions, lstm_units=256, hidden_units=64, activation="relu", seed=0):
        """
        Shared-LSTM actor-critic.
        The final LSTM hidden state feeds an actor head (hidden ReLU layer, softmax over the
        configurations) and a critic head (hidden ReLU layer, linear scalar).
        Args:
            input_dim (int): width of one observation vector.
            num_actions (int): |C|.
            lstm_units (int): LSTM width.
            hidden_units (int): width of the hidden layer of each head.
            activation (str): LSTM output activation.
            seed (int): initialisation seed.
        """
        self.input_dim = input_dim
        self.num_actions = num_actions
        self.lstm_units = lstm_units
        self.hidden_units = hidden_units
        self.activation = activation
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.lstm = LSTM(input_dim, lstm_units, rng, activation)
        self.actor = MLP(lstm_units, [hidden_units], num_actions, rng)
        self.critic = MLP(lstm_units, [hidden_units], 1, rng)
        self.logits = None

    def _named_layers(self):
        return [("lstm", self.lstm), *self.actor.named_layers("actor"), *self.critic.named_layers("critic")]

    def architecture(self):
        return {"type": "ActorCriticNet", "input_dim": self.input_dim, "num_actions": self.num_actions,
                "lstm_units": self.lstm_units, "hidden_units": self.hidden_units,
                "activation": self.activation, "seed": self.seed}

    def forward(self, windows):
        """
        Args:
            windows (np.ndarray): (batch, K, input_dim), or (K, input_dim) for one window.
        Returns:
            tuple: action probabilities (batch, |C|) and values (batch,), unbatched for one window.
        """
        x, single = self._batched(windows)
        _, h = self.lstm.forward(x)
        self.logits = self.actor.forward(h)
        values = self.critic.forward(h)[:, 0]
        probs = softmax(self.logits)
        if single:
            return probs[0], values[0]
        return probs, values

    def forward_actor(self, windows):
        return self.forward(windows)[0]

    def forward_critic(self, windows):
        return self.forward(windows)[1]

    def backward(self, dlogits=None, dvalues=None):
        """
        Accumulates gradients of a loss given its gradient at the actor logits and at the values.
        Both heads feed their contribution into the shared LSTM.
        Returns:
            ParamVector: the accumulated gradients.
        """
        batch = self.logits.shape[0]
        dh = np.zeros((batch, self.lstm_units))
        if dlogits is not None:
            dh += self.actor.backward(np.asarray(dlogits, dtype=float).reshape(batch, -1))
        if dvalues is not None:
            dh += self.critic.backward(np.asarray(dvalues, dtype=float).reshape(batch, 1))
        self.lstm.backward(dh_last=dh)
        return self.gradients()


class QNet(_Network):
    def __init__(self, input_dim, num_actions, lstm_units=256, hidden=(128, 128), activation="relu", seed=0):
        """Recurrent Q-network: LSTM, ReLU hidden layers, one Q-value per configuration."""
        self.input_dim = input_dim
        self.num_actions = num_actions
        self.lstm_units = lstm_units
        self.hidden = tuple(hidden)
        self.activation = activation
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.lstm = LSTM(input_dim, lstm_units, rng, activation)
        self.head = MLP(lstm_units, list(self.hidden), num_actions, rng)

    def _named_layers(self):
        return [("lstm", self.lstm), *self.head.named_layers("head")]

    def architecture(self):
        return {"type": "QNet", "input_dim": self.input_dim, "num_actions": self.num_actions,
                "lstm_units": self.lstm_units, "hidden": list(self.hidden),
                "activation": self.activation, "seed": self.seed}

    def forward(self, windows):
        x, single = self._batched(windows)
        _, h = self.lstm.forward(x)
        q = self.head.forward(h)
        return q[0] if single else q

    def backward(self, dq):
        dq = np.asarray(dq, dtype=float)
        dh = self.head.backward(dq.reshape(-1, self.num_actions))
        self.lstm.backward(dh_last=dh)
        return self.gradients()


_NETWORKS = {"ActorCriticNet": ActorCriticNet, "QNet": QNet}


def build_network(architecture):
    arch = dict(architecture)
    cls = _NETWORKS[arch.pop("type")]
    if "hidden" in arch:
        arch["hidden"] = tuple(arch["hidden"])
    return cls(**arch)


class SGD:
    def __init__(self, params, lr=1e-4):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for name, p in self.params.items():
            p -= self.lr * grads[name]


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        """
        Adam over the arrays of a ParamVector, updated in place.
        Only the names present in `params` are touched, so two optimizers may share a block.
        """
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            p -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


def make_optimizer(name, params, lr):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"Unknown optimizer '{name}'")


def gradient_check(loss_fn, params, analytic, h=1e-5, rtol=1e-4, atol=1e-7):
    """
    Compares analytic gradients with central finite differences, entry by entry.
    An entry passes when its absolute error is below atol or its relative error below rtol.
    Args:
        loss_fn (callable): returns the scalar loss for the current parameter values.
        params (ParamVector): parameters, perturbed in place and restored.
        analytic (ParamVector): gradients to check, same names as params.
        h (float): finite-difference step.
    Returns:
        dict: per parameter name the max relative error (entries under atol count as 0),
            the max absolute error and the overall verdict under 'passed'.
    """
    report = {"parameters": {}, "max_relative_error": 0.0, "max_absolute_error": 0.0}
    for name, array in params.items():
        grad = analytic[name]
        worst_rel, worst_abs = 0.0, 0.0
        for idx in np.ndindex(array.shape):
            saved = array[idx]
            array[idx] = saved + h
            plus = loss_fn()
            array[idx] = saved - h
            minus = loss_fn()
            array[idx] = saved
            numeric = (plus - minus) / (2 * h)
            abs_err = abs(grad[idx] - numeric)
            rel_err = 0.0 if abs_err < atol else abs_err / max(abs(grad[idx]), abs(numeric))
            worst_rel = max(worst_rel, rel_err)
            worst_abs = max(worst_abs, abs_err)
        report["parameters"][name] = {"max_relative_error": worst_rel, "max_absolute_error": worst_abs}
        report["max_relative_error"] = max(report["max_relative_error"], worst_rel)
        report["max_absolute_error"] = max(report["max_absolute_error"], worst_abs)
    report["passed"] = report["max_relative_error"] < rtol
    return report


def save_checkpoint(net, path):
    """
    Writes every named parameter and the architecture record to an .npz file.
    Returns:
        Path: the written file.
    """
    path = Path(path)
    arrays = {name: value for name, value in net.parameters().items()}
    arrays["__architecture__"] = np.array(json.dumps(net.architecture(), sort_keys=True))
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path):
    """
    Rebuilds a network from a checkpoint written by save_checkpoint.
    Raises:
        ValueError: If the format version is unknown or a parameter is missing.
    """
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["__format__"])
        if version != CHECKPOINT_FORMAT:
            raise ValueError(f"Unsupported checkpoint format {version}")
        net = build_network(json.loads(str(data["__architecture__"])))
        for name, array in net.parameters().items():
            if name not in data:
                raise ValueError(f"Checkpoint {path} lacks parameter {name}")
            array[...] = data[name]
    return net


def complexity(net):
    """
    Multiply-accumulate count sum_l n_l * n_{l+1} of each layer stack of the network.
    The LSTM counts as one layer from the input width to its width.
    Returns:
        dict: per stack name the count, and their sum under 'total'.
    """
    def stack(sizes):
        return int(sum(a * b for a, b in zip(sizes[:-1], sizes[1:])))

    if isinstance(net, ActorCriticNet):
        counts = {"actor": stack([net.input_dim, *net.actor.sizes]),
                  "critic": stack([net.input_dim, *net.critic.sizes])}
    else:
        counts = {"q": stack([net.input_dim, *net.head.sizes])}
    counts["total"] = sum(counts.values())
    return counts
