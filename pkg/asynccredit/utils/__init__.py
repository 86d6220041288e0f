from . import tensor, nets, checkpoint, envs, vsp, mixers, oracle, replay, report, filesystem
