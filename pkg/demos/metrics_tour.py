"""The ranking and repair metrics on small hand-made examples."""

from cexroot.evaluation import kendall_tau, mrr, ndcg_at_k, quality_at_best, reciprocal_rank

# judged quality of five narratives, in the order the system ranked them
judged = [0.6, 0.9, 0.3, 0.8, 0.1]
print("judged, system order:", judged)
print(f"quality at best:  {quality_at_best(judged):.3f}")
print(f"nDCG@5 graded:    {ndcg_at_k(judged, 5):.3f}")
print(f"nDCG@5 binary:    {ndcg_at_k(judged, 5, binary=True):.3f}")
print(f"reciprocal rank:  {reciprocal_rank(judged):.3f}")

# system scores descend with rank; tau compares them with the judged order
system = [5, 4, 3, 2, 1]
print(f"Kendall tau:      {kendall_tau(system, judged):.3f}")

# MRR over three problems: hit at rank 1, at rank 3, never
print(f"MRR:              {mrr([[0.9, 0.2], [0.1, 0.4, 0.7], [0.2, 0.1]]):.3f}")
