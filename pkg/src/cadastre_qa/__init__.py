"""Question answering over tabular historical-cadastre datasets.

Two complementary pipelines translate natural-language questions into
executable programs: a text-to-SQL agent for direct browsing queries and a
text-to-Python agent for complex analysis. Answer reliability is quantified
by running pipelines under multiple seeds and classifying the agreement of
answers and judge-extracted information scores.
"""

__version__ = "0.1.0"
