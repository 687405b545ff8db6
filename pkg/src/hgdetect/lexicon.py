"""Keyword pools shared by the synthetic graph generator and the offline
mock client's salience rules."""

# Names drawn from the public drug-type taxonomy (cannabis, opioids,
# hallucinogens, stimulants, depressants) plus common street tags.
DRUG_KEYWORDS = frozenset({
    "cannabis", "weed", "oxycodone", "codeine", "lsd", "mdma", "shroom",
    "shrooms", "mushrooms", "dmt", "cocaine", "amphetamine", "meth",
    "xanax", "valium", "halcion", "heroin", "acid", "acidtrip", "lsdtrip",
    "psychedelic", "psychedelics", "420", "ketamine", "opioid",
})

# Promotional / transactional vocabulary that marks seller behavior even in
# the absence of an explicit drug name.
PROMO_TERMS = frozenset({
    "dm", "menu", "shipping", "dispensary", "giveaway", "discount", "sale",
    "stock", "order", "delivery", "wickr", "telegram", "promo", "vendor",
})

NEUTRAL_KEYWORDS = (
    "coffee", "hiking", "photography", "soccer", "gaming", "cooking",
    "travel", "music", "painting", "cycling", "gardening", "reading",
    "yoga", "baking", "astronomy", "chess",
)

DRUG_KEYWORD_LIST = tuple(sorted(DRUG_KEYWORDS))
