"""Independent brute-force oracle for the truncated objective J_H and its gradient.

Enumerates every (s_0, a_0, ..., s_{H-1}, a_{H-1}) path of a tabular MDP under a
softmax policy and accumulates J_H = E[sum_t gamma^t r_t] and
grad J_H = E[sum_t gamma^t r_t * sum_{k<=t} grad log pi(a_k|s_k)].

usage: python3 oracle_grad_jh.py <mdp.json> <H> [theta...]
"""
import itertools
import json
import math
import sys


def main():
    spec = json.load(open(sys.argv[1]))
    horizon = int(sys.argv[2])
    ns, na, gamma = spec["n_states"], spec["n_actions"], spec["gamma"]
    theta = [float(x) for x in sys.argv[3:]] or [0.0] * (ns * na)
    pi = []
    for s in range(ns):
        row = theta[s * na:(s + 1) * na]
        z = sum(math.exp(v) for v in row)
        pi.append([math.exp(v) / z for v in row])
    j, grad = 0.0, [0.0] * (ns * na)
    for path in itertools.product(range(ns), range(na), repeat=horizon):
        states, actions = path[0::2], path[1::2]
        p = spec["rho"][states[0]]
        for t in range(horizon):
            p *= pi[states[t]][actions[t]]
            if t + 1 < horizon:
                p *= spec["transition"][states[t]][actions[t]][states[t + 1]]
        if p == 0.0:
            continue
        score = [0.0] * (ns * na)
        for t in range(horizon):
            s, a = states[t], actions[t]
            for b in range(na):
                score[s * na + b] += (1.0 if b == a else 0.0) - pi[s][b]
            r = gamma ** t * spec["reward"][s][a]
            j += p * r
            for i in range(ns * na):
                grad[i] += p * r * score[i]
    print(json.dumps({"j_h": j, "grad_j_h": grad}))


if __name__ == "__main__":
    main()
