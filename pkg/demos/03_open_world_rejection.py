"""Reject inputs from classes the model has never seen.

After k of 5 tasks, the test sets of the remaining tasks act as unseen
-class inputs. The system score of a sample is its best per-head score;
separability of seen vs unseen scores is summarized by ROC and
precision-recall areas, and the accuracy-rejection curve shows how
accuracy climbs as low-score samples are turned away.
"""

import opencil as oc

spec = oc.SynthSpec(num_classes=10, dim=32, per_class=200,
                    mean_separation=6.0, seed=7)
train, test = oc.holdout(oc.synth_gaussian(spec), 0.2, 7)
stream = oc.split_tasks(train, test, 5)

hp = oc.Hyperparams(epochs=150, learning_rate=0.01, batch_size=64,
                    hidden_width=128, seed=11)
model = oc.train_stream(oc.new_model(32, hp), stream, hp)

print("seen-vs-unseen separability after each step (dice+enmd):")
for k in range(1, 5):
    ind, ood = oc.evaluate_open(model, stream, k, "dice", "enmd")
    print(f"  step {k}: {len(ind):4d} seen vs {len(ood):4d} unseen   "
          f"auc={oc.auc(ind, ood):.4f}  aupr={oc.aupr(ind, ood):.4f}")

# accuracy-rejection curve after the first task: 1 seen task vs 4 unseen,
# so accuracy starts near 20% and climbs as rejection removes unseen samples
print("\naccuracy-rejection curve after task 1 (5% grid):")
scores, correct = oc.mixed_scores(model, stream, 1, "dice", "enmd")
for point in oc.rejection_curve(scores, correct, grid_step=5.0):
    bar = "#" * int(round(point.accuracy * 40))
    print(f"  reject {point.rejection_rate:4.0%}  keep {point.retained_count:3d}  "
          f"acc {point.accuracy:6.2%}  {bar}")
