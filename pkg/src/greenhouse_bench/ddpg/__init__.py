"""DDPG agent: networks, replay buffer, environment and training loop."""
from .agent import (AgentBundle, DivergenceDetected, RlController, TrainConfig, act, actor_loss_and_grads,
                    actor_update, critic_loss_and_grads, critic_update, evaluate, evaluation_envs, load_checkpoint,
                    new_bundle, rl_controller, save_checkpoint, target_q, train, write_curve)
from .buffer import Batch, ReplayBuffer
from .env import (EpisodeSampler, GreenhouseEnv, ReferenceSchedule, RewardConfig, StateScaler,
                  action_to_input, build_state, input_to_action, reward)
from .networks import Actor, Adam, ArchitectureMismatch, Critic, Mlp, Sgd, soft_update

__all__ = [
    "AgentBundle", "DivergenceDetected", "RlController", "TrainConfig", "act", "actor_loss_and_grads",
    "actor_update", "critic_loss_and_grads", "critic_update", "evaluate", "evaluation_envs", "load_checkpoint",
    "new_bundle", "rl_controller", "save_checkpoint", "target_q", "train", "write_curve",
    "Batch", "ReplayBuffer", "EpisodeSampler", "GreenhouseEnv", "ReferenceSchedule", "RewardConfig",
    "StateScaler", "action_to_input", "build_state", "input_to_action", "reward",
    "Actor", "Adam", "ArchitectureMismatch", "Critic", "Mlp", "Sgd", "soft_update",
]
