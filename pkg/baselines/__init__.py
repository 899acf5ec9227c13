# POP, S-POP and Item-KNN reference scorers.
