"""End-to-end continual-learning runs.

One run walks the task stream in order. For each task it trains that
task's subspace module, fine-tunes every existing subspace classifier with
Gaussian replay, records the new classes' statistics in all subspaces, and
evaluates on the pooled test sets of everything seen so far. The stream's
access guard stays armed throughout, so any read past the current task
raises instead of silently leaking the future.

Baselines reuse the same loop: ``noe`` and ``se`` differ only in the fusion
rule, ``naive_base`` stops growing the pool after the first subspace, and
``misaligned`` trains one head per task with no replay and concatenates
their logits.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, extract_features, init_random_projection, pretrain_mlp_backbone
from .classifiers import (
    HeadHyper,
    ReplayPlan,
    SubspaceClassifier,
    finetune_classifier,
    fit_linear_head,
)
from .config import ExperimentConfig
from .data import TaskStream, build_task_stream, gen_synthetic_stream, load_idx
from .ensemble import (
    ScoreStack,
    aee_predict,
    misaligned_predict,
    no_ensemble_predict,
    simple_ensemble_predict,
)
from .gauss import GaussStore
from .numeric import RngStream, rng_stream
from .peft import PeftHyper, PeftPool, train_peft_module

__all__ = [
    "RunReport",
    "RunState",
    "build_stream",
    "build_backbone",
    "compute_metrics",
    "run_experiment",
    "subspace_probe",
    "expertise_analysis",
]


@dataclass
class RunReport:
    """Everything a finished run reports.

    ``acc_matrix[i][j]`` is accuracy on task j's test set after learning
    task i (lower-triangular; NaN above the diagonal). ``a_t[i]`` is the
    micro-averaged accuracy over the pooled test sets of tasks 0..i. The
    last-task value is the final accuracy; their mean is the incremental
    average.
    """

    mode: str
    seed: int
    acc_matrix: np.ndarray
    a_t: np.ndarray
    laa: float
    iaa: float
    wall_clock: float
    config_text: str = ""


@dataclass
class RunState:
    """Trained artefacts kept when the caller asks for them."""

    backbone: Backbone
    pool: PeftPool
    store: GaussStore
    classifiers: list[SubspaceClassifier]
    stream: TaskStream
    final_stack: ScoreStack | None = None
    misaligned_heads: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def build_stream(config: ExperimentConfig, rng: RngStream) -> TaskStream:
    s = config.stream
    if s.kind == "synthetic":
        return gen_synthetic_stream(
            n_tasks=s.tasks,
            classes_per_task=s.classes_per_task,
            input_dim=s.input_dim,
            disc_dims=s.disc_dims,
            noise=s.noise,
            n_per_class=s.samples_per_class,
            rng=rng.child("stream"),
            pretrain_classes=s.pretrain_classes,
        )
    train = load_idx(s.train_images, s.train_labels)
    test = load_idx(s.test_images, s.test_labels)
    return build_task_stream(
        train,
        test,
        n_tasks=s.tasks,
        shuffle_seed=s.shuffle_seed,
        first_task_size=s.first_task_size or None,
        pretrain_classes=s.pretrain_classes,
    )


def build_backbone(config: ExperimentConfig, stream: TaskStream, rng: RngStream) -> Backbone:
    b = config.backbone
    dim = config.backbone_dim()
    sample = stream.train(0).inputs if stream.pretrain is None else stream.pretrain.inputs
    input_shape = sample.shape[1:]
    if b.kind == "random_projection":
        return init_random_projection(input_shape, dim, rng.child("backbone"))
    if stream.pretrain is None:
        raise ValueError("pretrained_mlp backbone needs a pre-training split")
    return pretrain_mlp_backbone(
        stream.pretrain,
        dim,
        rng.child("backbone"),
        hidden=b.hidden,
        epochs=b.epochs,
        lr=b.lr,
        batch_size=b.batch_size,
    )


def compute_metrics(acc_matrix: np.ndarray, a_t: np.ndarray) -> tuple[float, float]:
    """(final accuracy, incremental average accuracy)."""
    return float(a_t[-1]), float(np.mean(a_t))


def _group_by_class(feats: np.ndarray, labels: np.ndarray) -> dict[int, np.ndarray]:
    return {int(c): feats[labels == c] for c in np.unique(labels)}


_STACK_MODES = ("aee", "se", "noe")


def run_experiment(
    config: ExperimentConfig,
    extra_modes: tuple[str, ...] = (),
    return_state: bool = False,
):
    """Run the configured stream once and score the requested mode(s).

    Returns the primary mode's RunReport; with ``extra_modes`` a dict
    mode -> RunReport for every requested mode (they share one trained
    model, so cross-mode comparisons see identical subspaces); with
    ``return_state`` a (reports, RunState) pair.
    """
    t0 = time.monotonic()
    modes = [config.ensemble.mode] + [m for m in extra_modes if m != config.ensemble.mode]
    for m in modes:
        if m not in _STACK_MODES + ("naive_base", "misaligned"):
            raise ValueError(f"unknown evaluation mode {m!r}")
    stack_modes = [m for m in modes if m in _STACK_MODES]
    want_naive = "naive_base" in modes
    want_misaligned = "misaligned" in modes

    root = rng_stream(config.run.seed, "run")
    stream = build_stream(config, root)
    stream.visible_limit = 0
    backbone = build_backbone(config, stream, root)
    dim = backbone.out_dim
    T = stream.num_tasks

    peft_hyper = PeftHyper(
        kind=config.peft.kind,
        rank=config.peft.rank,
        alpha=config.peft.alpha,
        epochs=config.peft.epochs,
        lr=config.peft.lr,
        batch_size=config.peft.batch_size,
        weight_decay=config.peft.weight_decay,
    )
    head_hyper = HeadHyper(
        lr=config.head.lr, epochs=config.head.epochs, batch_size=config.head.batch_size
    )
    plan = ReplayPlan(per_class=config.head.replay_per_class)
    use_raw = config.ensemble.scores == "logits"

    pool = PeftPool(dim)
    store = GaussStore(dim)
    classifiers: list[SubspaceClassifier] = []
    misaligned_heads: list[tuple[np.ndarray, np.ndarray]] = []
    naive_clf: SubspaceClassifier | None = None
    naive_store = GaussStore(dim) if want_naive else None

    acc = {m: np.full((T, T), np.nan) for m in modes}
    a_t = {m: np.zeros(T) for m in modes}
    test_base_feats: list[np.ndarray] = []
    test_labels: list[np.ndarray] = []
    final_stack: ScoreStack | None = None

    for t in range(T):
        stream.visible_limit = t
        train_t = stream.train(t)
        base_feats = extract_features(backbone, train_t.inputs)

        module = train_peft_module(
            train_t, backbone, peft_hyper, root.child(f"peft/t{t}"), task_index=t
        )
        pool.add(module)

        # classifier pass: every subspace k <= t sees the new classes
        sub_feats = {k: pool.forward(k, base_feats) for k in range(t + 1)}
        if stack_modes:
            for k in range(t + 1):
                if k == len(classifiers):
                    # a new subspace's classifier must cover every class seen
                    # so far; old classes are only reachable through replay
                    clf = SubspaceClassifier(subspace=k, dim=dim)
                    for j in range(t):
                        clf.expand_head(len(stream.classes_of(j)))
                    classifiers.append(clf)
                clf = classifiers[k]
                clf.expand_head(len(stream.classes_of(t)))
                finetune_classifier(
                    clf,
                    sub_feats[k],
                    train_t.labels,
                    store,
                    plan,
                    head_hyper,
                    root.child(f"clf/k{k}/t{t}"),
                )

            # statistics recorded after fine-tuning, in every existing subspace
            store.record_task_gaussians(
                t,
                {k: _group_by_class(sub_feats[k], train_t.labels) for k in range(t + 1)},
            )

        if want_naive:
            # first subspace only: no new modules, no adaptive fusion
            if naive_clf is None:
                naive_clf = SubspaceClassifier(subspace=0, dim=dim)
            naive_clf.expand_head(len(stream.classes_of(t)))
            finetune_classifier(
                naive_clf,
                sub_feats[0],
                train_t.labels,
                naive_store,
                plan,
                head_hyper,
                root.child(f"clf/k0/t{t}").clone(),
            )
            naive_store.record_task_gaussians(
                t, {0: _group_by_class(sub_feats[0], train_t.labels)}
            )

        if want_misaligned:
            w, b, _ = fit_linear_head(
                sub_feats[t],
                train_t.labels - stream.task_class_ranges[t][0],
                len(stream.classes_of(t)),
                head_hyper,
                root.child(f"mis/t{t}"),
            )
            misaligned_heads.append((w, b))

        # evaluation over everything seen so far
        test_t = stream.test(t)
        test_base_feats.append(extract_features(backbone, test_t.inputs))
        test_labels.append(test_t.labels)
        ranges = stream.task_class_ranges[: t + 1]
        pooled_labels = np.concatenate(test_labels)
        per_task_slices = []
        off = 0
        for j in range(t + 1):
            per_task_slices.append(slice(off, off + len(test_labels[j])))
            off += len(test_labels[j])

        sub_test = {
            k: np.vstack([pool.forward(k, f) for f in test_base_feats])
            for k in range(t + 1)
        }

        def record(mode: str, pred: np.ndarray) -> None:
            correct = pred == pooled_labels
            a_t[mode][t] = float(np.mean(correct))
            for j in range(t + 1):
                acc[mode][t, j] = float(np.mean(correct[per_task_slices[j]]))

        if stack_modes:
            stack = ScoreStack(
                [classifiers[k].score(sub_test[k], raw=use_raw) for k in range(t + 1)],
                ranges,
            )
            for mode in stack_modes:
                if mode == "aee":
                    _, pred = aee_predict(stack)
                elif mode == "se":
                    _, pred = simple_ensemble_predict(stack)
                else:
                    _, pred = no_ensemble_predict(stack)
                record(mode, pred)
            if t == T - 1:
                final_stack = stack
        if want_naive:
            probs = naive_clf.score(sub_test[0], raw=use_raw)
            record("naive_base", np.argmax(probs, axis=1))
        if want_misaligned:
            mis_feats = [sub_test[k] for k in range(t + 1)]
            record("misaligned", misaligned_predict(misaligned_heads, mis_feats, ranges))

    wall = time.monotonic() - t0
    reports = {}
    for mode in modes:
        laa, iaa = compute_metrics(acc[mode], a_t[mode])
        reports[mode] = RunReport(
            mode=mode,
            seed=config.run.seed,
            acc_matrix=acc[mode],
            a_t=a_t[mode],
            laa=laa,
            iaa=iaa,
            wall_clock=wall,
        )
    result = reports if extra_modes else reports[config.ensemble.mode]
    if return_state:
        state = RunState(
            backbone=backbone,
            pool=pool,
            store=store,
            classifiers=classifiers,
            stream=stream,
            final_stack=final_stack,
            misaligned_heads=misaligned_heads,
        )
        return result, state
    return result


def subspace_probe(
    state: RunState,
    hyper: HeadHyper,
    rng: RngStream,
) -> np.ndarray:
    """Offline (K, T) map: a fresh oracle head per subspace, scored per task.

    For each subspace k, one linear head is fit on the mapped training
    features of ALL tasks at once, then scored on each task's test set
    separately. This is a diagnostic with full stream access; the guard is
    deliberately lifted here and re-armed afterwards.
    """
    stream = state.stream
    saved_limit = stream.visible_limit
    stream.visible_limit = None
    try:
        T = stream.num_tasks
        K = len(state.pool)
        train_feats = [
            extract_features(state.backbone, stream.train(t).inputs) for t in range(T)
        ]
        train_labels = np.concatenate([stream.train(t).labels for t in range(T)])
        test_feats = [
            extract_features(state.backbone, stream.test(t).inputs) for t in range(T)
        ]
        test_labels = [stream.test(t).labels for t in range(T)]

        result = np.zeros((K, T))
        for k in range(K):
            x = np.vstack([state.pool.forward(k, f) for f in train_feats])
            w, b, _ = fit_linear_head(
                x, train_labels, stream.n_classes, hyper, rng.child(f"probe/k{k}")
            )
            for t in range(T):
                z = state.pool.forward(k, test_feats[t])
                pred = np.argmax(z @ w.T + b, axis=1)
                result[k, t] = float(np.mean(pred == test_labels[t]))
        return result
    finally:
        stream.visible_limit = saved_limit


def expertise_analysis(state: RunState) -> np.ndarray:
    """(T, T) map: row m-1 reruns the final adaptive fusion with only the
    first m subspaces, scored on each task's test set. Row 0 matches the
    first-subspace rule; row T-1 is the full ensemble."""
    if state.final_stack is None:
        raise ValueError("run did not produce a score stack")
    stream = state.stream
    saved_limit = stream.visible_limit
    stream.visible_limit = None
    try:
        T = stream.num_tasks
        labels = np.concatenate([stream.test(t).labels for t in range(T)])
        slices = []
        off = 0
        for t in range(T):
            n = stream.test(t).n
            slices.append(slice(off, off + n))
            off += n
        result = np.zeros((T, T))
        for m in range(1, T + 1):
            _, pred = aee_predict(state.final_stack, max_subspaces=m)
            correct = pred == labels
            for t in range(T):
                result[m - 1, t] = float(np.mean(correct[slices[t]]))
        return result
    finally:
        stream.visible_limit = saved_limit
