from .portfolio import (
    PortfolioConfig,
    PortfolioEnv,
    annualized_return,
    equal_crp_rewards,
    make_tasks,
    portfolio_reward,
    portfolio_state,
    portfolio_weights_drift,
    scorer_deviation,
)
from .prices import PriceRegime, PriceSeries, generate_synthetic_prices, load_prices, save_prices
from .synthetic import (
    SyntheticAllocationEnv,
    SyntheticConfig,
    permute_augment,
    synthetic_optimal_allocation,
    synthetic_reward,
)

__all__ = [
    "PortfolioConfig",
    "PortfolioEnv",
    "PriceRegime",
    "PriceSeries",
    "SyntheticAllocationEnv",
    "SyntheticConfig",
    "annualized_return",
    "equal_crp_rewards",
    "generate_synthetic_prices",
    "load_prices",
    "make_tasks",
    "permute_augment",
    "portfolio_reward",
    "portfolio_state",
    "portfolio_weights_drift",
    "save_prices",
    "scorer_deviation",
    "synthetic_optimal_allocation",
    "synthetic_reward",
]
