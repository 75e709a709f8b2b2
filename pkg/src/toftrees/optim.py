"""Bounded adaptive optimizer: Adam moments with the per-element step size
clipped into a schedule that converges toward a final SGD-like rate."""

from __future__ import annotations

import torch


class AdaBound(torch.optim.Optimizer):
    """Adam with dynamically bounded per-element learning rates.

    The per-element rate clip(base_rate / (sqrt(v_hat) + eps), floor(t),
    ceiling(t)) always stays inside [rate_floor, rate_ceiling]; the floor
    ramps from rate_floor toward final_rate as 1/(gamma*t + 1) decays, and
    the ceiling is the final_rate cap itself. With bounds disabled
    (floor=-inf, ceiling=+inf via `bounded=False`) the update is exactly
    bias-corrected Adam.
    """

    def __init__(self, params, base_rate: float = 1e-3, final_rate: float = 2e-2,
                 rate_floor: float = 1e-4, rate_ceiling: float = 2e-2,
                 betas: tuple[float, float] = (0.9, 0.999), gamma: float = 1e-3,
                 eps: float = 1e-8, bounded: bool = True):
        if base_rate <= 0:
            raise ValueError(f"base_rate must be positive, got {base_rate}")
        if not 0.0 <= betas[0] < 1.0 or not 0.0 <= betas[1] < 1.0:
            raise ValueError(f"betas must be in [0, 1), got {betas}")
        defaults = dict(
            base_rate=base_rate, final_rate=final_rate, rate_floor=rate_floor,
            rate_ceiling=rate_ceiling, betas=betas, gamma=gamma, eps=eps,
            bounded=bounded,
        )
        super().__init__(params, defaults)

    @staticmethod
    def rate_bounds(t: int, final_rate: float, rate_floor: float,
                    rate_ceiling: float, gamma: float) -> tuple[float, float]:
        """Learning-rate clamp interval at step t (t >= 1)."""
        lower = final_rate * (1.0 - 1.0 / (gamma * t + 1.0))
        lower = min(max(lower, rate_floor), rate_ceiling)
        return lower, rate_ceiling

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                if not torch.isfinite(grad).all():
                    raise ValueError("non-finite gradient in optimizer step")
                state = self.state[p]
                if len(state) == 0:
                    state["step"] = 0
                    state["m"] = torch.zeros_like(p)
                    state["v"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                m, v = state["m"], state["v"]
                m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
                v.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
                m_hat = m / (1.0 - beta1 ** t)
                v_hat = v / (1.0 - beta2 ** t)
                rate = group["base_rate"] / (v_hat.sqrt() + group["eps"])
                if group["bounded"]:
                    lower, upper = self.rate_bounds(
                        t, group["final_rate"], group["rate_floor"],
                        group["rate_ceiling"], group["gamma"],
                    )
                    rate = rate.clamp(lower, upper)
                p.add_(rate * m_hat, alpha=-1.0)
        return loss

    def effective_rates(self) -> list[torch.Tensor]:
        """Per-element rates that the next step would apply (for diagnostics)."""
        rates = []
        for group in self.param_groups:
            for p in group["params"]:
                state = self.state.get(p)
                if not state:
                    continue
                t = state["step"]
                v_hat = state["v"] / (1.0 - group["betas"][1] ** t)
                rate = group["base_rate"] / (v_hat.sqrt() + group["eps"])
                if group["bounded"]:
                    lower, upper = self.rate_bounds(
                        t, group["final_rate"], group["rate_floor"],
                        group["rate_ceiling"], group["gamma"],
                    )
                    rate = rate.clamp(lower, upper)
                rates.append(rate)
        return rates

    def state_arrays(self) -> dict[str, torch.Tensor]:
        """Flat view of the moment tensors for checkpointing (insertion order)."""
        out: dict[str, torch.Tensor] = {}
        for gi, group in enumerate(self.param_groups):
            for pi, p in enumerate(group["params"]):
                state = self.state.get(p)
                if not state:
                    continue
                out[f"g{gi}.p{pi}.m"] = state["m"]
                out[f"g{gi}.p{pi}.v"] = state["v"]
                out[f"g{gi}.p{pi}.step"] = torch.tensor(float(state["step"]))
        return out

    def load_state_arrays(self, arrays: dict[str, torch.Tensor]) -> None:
        for gi, group in enumerate(self.param_groups):
            for pi, p in enumerate(group["params"]):
                key = f"g{gi}.p{pi}"
                if f"{key}.m" not in arrays:
                    continue
                self.state[p] = {
                    "step": int(arrays[f"{key}.step"].item()),
                    "m": arrays[f"{key}.m"].to(p.dtype).clone(),
                    "v": arrays[f"{key}.v"].to(p.dtype).clone(),
                }
